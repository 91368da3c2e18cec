"""Vision Transformer built on :mod:`pqvit.autodiff`.

Pipeline per image: split into P×P patches, project each with ``E``, prepend
the class token, add position embeddings, run ``depth`` pre-LN encoder
layers (attention block then MLP block, each with a residual), apply a final
LayerNorm to the class token and map it to class logits with an affine head.

Parameters live in a flat ``dict[str, Tensor]`` whose keys are stable and are
used verbatim as checkpoint tensor names.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


@dataclass(frozen=True)
class ViTConfig:
    height: int = 224
    width: int = 224
    channels: int = 1
    patch: int = 16
    dim: int = 768
    depth: int = 12
    heads: int = 12
    mlp_ratio: int = 4
    n_classes: int = 17
    final_norm: bool = True
    ln_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ShapeError(f"image {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ShapeError(f"dim {self.dim} not divisible by heads {self.heads}")
        if min(self.channels, self.depth, self.mlp_ratio, self.n_classes) < 1:
            raise ValueError("channels, depth, mlp_ratio and n_classes must be >= 1")

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_len(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


Params = dict[str, Tensor]

# Tensors that the optimizer never decays.
NO_DECAY_SUFFIXES = (".gamma", ".beta", ".bias")
NO_DECAY_NAMES = ("cls_token", "pos_embed")


def decays(name: str) -> bool:
    return not (name in NO_DECAY_NAMES or name.endswith(NO_DECAY_SUFFIXES))


def param_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    d, hidden = cfg.dim, cfg.dim * cfg.mlp_ratio
    shapes = {
        "patch_embed.weight": (cfg.patch_len, d),
        "pos_embed": (cfg.n_patches + 1, d),
        "cls_token": (d,),
    }
    for i in range(cfg.depth):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1.gamma": (d,), p + "ln1.beta": (d,),
            p + "attn.q.weight": (d, d), p + "attn.q.bias": (d,),
            p + "attn.k.weight": (d, d), p + "attn.k.bias": (d,),
            p + "attn.v.weight": (d, d), p + "attn.v.bias": (d,),
            p + "attn.o.weight": (d, d), p + "attn.o.bias": (d,),
            p + "ln2.gamma": (d,), p + "ln2.beta": (d,),
            p + "mlp.fc1.weight": (d, hidden), p + "mlp.fc1.bias": (hidden,),
            p + "mlp.fc2.weight": (hidden, d), p + "mlp.fc2.bias": (d,),
        })
    if cfg.final_norm:
        shapes.update({"norm.gamma": (d,), "norm.beta": (d,)})
    shapes.update({"head.weight": (d, cfg.n_classes), "head.bias": (cfg.n_classes,)})
    return shapes


def _truncated_std(c: float) -> float:
    """Standard deviation of a unit normal restricted to [-c, c]."""
    mass = 2 * ndtr(c) - 1
    return math.sqrt(1 - 2 * c * math.exp(-c * c / 2) / math.sqrt(2 * math.pi) / mass)


# cut point (in units of the underlying normal) at which the truncated
# distribution's own std is half the cut, so std s comes with support ±2s
_CUT = brentq(lambda c: _truncated_std(c) - c / 2, 0.5, 3.0)


def _trunc_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    """Zero-mean truncated normal with realized std ``std`` and support ±bound·std.

    Only ``bound == 2`` is calibrated; the underlying normal is cut at
    ``_CUT`` and rescaled so the truncated draw has the requested spread.
    """
    if bound != 2.0:
        raise ValueError("only a ±2σ truncation is supported")
    out = rng.standard_normal(shape)
    bad = np.abs(out) > _CUT
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > _CUT
    return out * (std / _truncated_std(_CUT))


def init_model(cfg: ViTConfig, seed: int | None = None, dtype=np.float64) -> Params:
    """Fresh parameters: weights from a truncated normal with std 0.02 on ±0.04.

    Biases, the class token and LayerNorm shifts start at zero and LayerNorm
    scales at one.  The position embeddings are weights and get the same
    truncated normal as the projections.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed if seed is None else seed))
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gamma"):
            arr = np.ones(shape)
        elif name.endswith((".beta", ".bias")) or name == "cls_token":
            arr = np.zeros(shape)
        else:
            arr = _trunc_normal(rng, shape, 0.02, 2.0)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


def check_params(params: Params, cfg: ViTConfig) -> None:
    expected = param_shapes(cfg)
    missing = set(expected) - set(params)
    if missing:
        raise ShapeError(f"missing parameters: {sorted(missing)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"{name}: expected {shape}, got {params[name].shape}")


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """Split (..., H, W, C) images into (..., N, P·P·C) row-major patches."""
    images = np.asarray(images)
    if images.ndim < 3:
        raise ShapeError(f"expected (..., H, W, C) images, got shape {images.shape}")
    *lead, h, w, c = images.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = images.reshape(*lead, gh, patch, gw, patch, c)
    k = len(lead)
    x = np.moveaxis(x, k + 2, k + 1)  # (..., gh, gw, P, P, C)
    return x.reshape(*lead, gh * gw, patch * patch * c)


def unpatchify(patches: np.ndarray, patch: int, height: int, width: int, channels: int) -> np.ndarray:
    patches = np.asarray(patches)
    *lead, n, _ = patches.shape
    gh, gw = height // patch, width // patch
    if n != gh * gw:
        raise ShapeError(f"{n} patches cannot tile a {height}x{width} image with patch {patch}")
    x = patches.reshape(*lead, gh, gw, patch, patch, channels)
    k = len(lead)
    x = np.moveaxis(x, k + 1, k + 2)
    return x.reshape(*lead, height, width, channels)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def embed(patches, params: Params) -> Tensor:
    """(B, N, P²C) patches -> (B, N+1, D) tokens: [cls; patches·E] + E_pos."""
    x = patches if isinstance(patches, Tensor) else Tensor(patches)
    if x.data.ndim != 3:
        raise ShapeError(f"embed expects (B, N, P²C) patches, got {x.shape}")
    b, n, _ = x.shape
    e, pos, cls = params["patch_embed.weight"], params["pos_embed"], params["cls_token"]
    if x.shape[-1] != e.shape[0]:
        raise ShapeError(f"patch length {x.shape[-1]} != projection rows {e.shape[0]}")
    if pos.shape[0] != n + 1:
        raise ShapeError(f"{n} patches need {n + 1} position rows, have {pos.shape[0]}")
    d = e.shape[1]
    tokens = ad.matmul(x, e)
    cls_rows = ad.broadcast_to(ad.reshape(cls, (1, 1, d)), (b, 1, d))
    return ad.add(ad.concat([cls_rows, tokens], axis=1), pos)


def _linear(x: Tensor, params: Params, prefix: str) -> Tensor:
    return ad.add(ad.matmul(x, params[prefix + ".weight"]), params[prefix + ".bias"])


def attention(x: Tensor, params: Params, prefix: str, heads: int, weights_out: list | None = None) -> Tensor:
    """Multi-head self-attention over (B, T, D) tokens."""
    b, t, d = x.shape
    dh = d // heads

    def split(z):
        return ad.transpose(ad.reshape(z, (b, t, heads, dh)), (0, 2, 1, 3))

    q = split(_linear(x, params, prefix + ".q"))
    k = split(_linear(x, params, prefix + ".k"))
    v = split(_linear(x, params, prefix + ".v"))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    probs = ad.softmax_rows(scores)
    if weights_out is not None:
        weights_out.append(probs.data)
    ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (b, t, d))
    return _linear(ctx, params, prefix + ".o")


def encoder_layer(x: Tensor, params: Params, index: int, cfg: ViTConfig,
                  weights_out: list | None = None) -> Tensor:
    p = f"layers.{index}."
    h = ad.layer_norm(x, params[p + "ln1.gamma"], params[p + "ln1.beta"], cfg.ln_eps)
    x = ad.add(attention(h, params, p + "attn", cfg.heads, weights_out), x)
    h = ad.layer_norm(x, params[p + "ln2.gamma"], params[p + "ln2.beta"], cfg.ln_eps)
    h = _linear(ad.gelu(_linear(h, params, p + "mlp.fc1")), params, p + "mlp.fc2")
    return ad.add(h, x)


def logits_from_patches(patches, params: Params, cfg: ViTConfig, weights_out: list | None = None) -> Tensor:
    z = embed(patches, params)
    for i in range(cfg.depth):
        z = encoder_layer(z, params, i, cfg, weights_out)
    cls = ad.select(z, 0, axis=1)
    if cfg.final_norm:
        cls = ad.layer_norm(cls, params["norm.gamma"], params["norm.beta"], cfg.ln_eps)
    return _linear(cls, params, "head")


def _batch(images: np.ndarray, cfg: ViTConfig) -> tuple[np.ndarray, bool]:
    images = np.asarray(images)
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.shape[1:] != (cfg.height, cfg.width, cfg.channels):
        raise ShapeError(
            f"image shape {images.shape[1:]} does not match config "
            f"{(cfg.height, cfg.width, cfg.channels)}"
        )
    return images, single


def logits(images: np.ndarray, params: Params, cfg: ViTConfig, weights_out: list | None = None) -> Tensor:
    """Class logits for (B, H, W, C) or (H, W, C) model-input images."""
    images, single = _batch(images, cfg)
    dtype = params["patch_embed.weight"].dtype
    out = logits_from_patches(patchify(images.astype(dtype, copy=False), cfg.patch), params, cfg, weights_out)
    return ad.select(out, 0, axis=0) if single else out


def forward(images: np.ndarray, params: Params, cfg: ViTConfig) -> np.ndarray:
    """Class probabilities, shape (K,) for one image or (B, K) for a batch."""
    return ad.softmax_rows(logits(images, params, cfg)).data


def predict(images: np.ndarray, params: Params, cfg: ViTConfig, batch_size: int = 8) -> np.ndarray:
    images = np.asarray(images)
    out = [np.argmax(forward(images[i:i + batch_size], params, cfg), axis=-1)
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
