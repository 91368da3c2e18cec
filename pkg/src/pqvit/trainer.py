"""Mini-batch training of the ViT with AdamW, plus a finite-difference gradient check."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import vit
from .autodiff import ShapeError, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import DataError, DatasetManifest, grid_of
from .raster import ImageSpec, rasterize, to_model_input
from .signals import derive_seed, make_rng

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.loss = epoch, batch, loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    eval_batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 writes only the final checkpoint
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch sizes >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment coefficients must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "eval_acc", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.eval_acc), f"{r.seconds:.3f}"])

    def to_list(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_list(cls, rows) -> "TrainHistory":
        return cls([EpochRecord(**r) for r in rows])


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: vit.Params, grads: dict[str, np.ndarray], state: AdamState,
               lr: float, weight_decay: float = 0.0, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8,
               decay_filter=vit.decays) -> tuple[vit.Params, AdamState]:
    """One AdamW update, in place on ``params``.

    Decay is decoupled (``p -= lr·wd·p``) and skipped for names rejected by
    ``decay_filter`` (LayerNorm parameters, biases, class token, positions).
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        data = p.data
        if weight_decay and decay_filter(name):
            data = data - lr * weight_decay * data
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (data - lr * update).astype(p.data.dtype, copy=False)
    return params, state


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def image_spec_for(cfg: vit.ViTConfig, amp_range=(-2.2, 2.2)) -> ImageSpec:
    return ImageSpec(height=cfg.height, width=cfg.width, channels=cfg.channels, amp_range=tuple(amp_range))


def render_records(manifest: DatasetManifest, records: list[dict], spec: ImageSpec, dtype=np.float32) -> np.ndarray:
    """Rasterize records into a (B, H, W, C) array of model inputs."""
    samples = manifest.load_samples(records)
    out = np.empty((len(records), spec.height, spec.width, spec.channels), dtype=dtype)
    for i, s in enumerate(samples):
        out[i] = to_model_input(rasterize(s, spec))
    return out


def evaluate(images: np.ndarray, params: vit.Params, cfg: vit.ViTConfig, batch_size: int = 8) -> np.ndarray:
    return vit.predict(images, params, cfg, batch_size)


def loss_and_grads(images: np.ndarray, labels: np.ndarray, params: vit.Params, cfg: vit.ViTConfig):
    with ad.Tape() as tape:
        z = vit.logits(images, params, cfg)
        loss = ad.cross_entropy(z, labels)
    return float(loss.data), ad.backward(tape, loss, params), z.data


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _header(cfg: vit.ViTConfig, tcfg: TrainConfig, spec: ImageSpec, manifest_grid, history: TrainHistory,
            epochs_done: int, state: AdamState, class_ids) -> dict:
    return {
        "class_ids": [int(c) for c in class_ids],
        "vit": cfg.to_dict(),
        "train": asdict(tcfg),
        "image": {**asdict(spec), "amp_range": list(spec.amp_range)},
        "grid": manifest_grid,
        "history": history.to_list(),
        "epochs_done": epochs_done,
        "opt_step": state.step,
    }


def write_checkpoint(path, params, cfg, tcfg, spec, grid, history, epochs_done, state, class_ids=None) -> None:
    class_ids = range(cfg.n_classes) if class_ids is None else class_ids
    tensors = dict(params)
    for name in params:
        if name in state.m:
            tensors["opt.m." + name] = state.m[name]
            tensors["opt.v." + name] = state.v[name]
    save_checkpoint(path, tensors, _header(cfg, tcfg, spec, grid, history, epochs_done, state, class_ids), dtype=tcfg.dtype)


def read_checkpoint(path):
    """Load a training checkpoint into (params, cfg, header, AdamState)."""
    header, tensors = load_checkpoint(path)
    cfg = vit.ViTConfig(**header["vit"])
    params = {n: Tensor(a.copy(), requires_grad=True) for n, a in tensors.items() if not n.startswith("opt.")}
    vit.check_params(params, cfg)
    state = AdamState(step=header.get("opt_step", 0))
    for n, a in tensors.items():
        if n.startswith("opt.m."):
            state.m[n[6:]] = a.copy()
        elif n.startswith("opt.v."):
            state.v[n[6:]] = a.copy()
    return params, cfg, header, state


def image_spec_from_header(header: dict) -> ImageSpec:
    im = dict(header["image"])
    im["amp_range"] = tuple(im["amp_range"])
    return ImageSpec(**im)


def class_index(records: list[dict], class_ids) -> np.ndarray:
    """Map dataset class ids to model output positions."""
    pos = {int(c): i for i, c in enumerate(class_ids)}
    try:
        return np.array([pos[r["class_id"]] for r in records], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"class {exc.args[0]} is not among the model's classes {list(class_ids)}") from None


def train(manifest: DatasetManifest, cfg: vit.ViTConfig, tcfg: TrainConfig, out_dir=None,
          spec: ImageSpec | None = None, resume: str | Path | None = None, images=None,
          class_ids=None):
    """Train from scratch (or resume) and return ``(params, history)``.

    ``class_ids`` lists the dataset classes in model-output order (default
    ``0..K-1``).  ``images`` may carry pre-rendered ``(train_x, test_x)``
    arrays matching the manifest's split order, to skip rasterization.
    """
    class_ids = tuple(range(cfg.n_classes)) if class_ids is None else tuple(int(c) for c in class_ids)
    if len(class_ids) != cfg.n_classes:
        raise ValueError(f"{len(class_ids)} class ids for a {cfg.n_classes}-way model")
    spec = spec or image_spec_for(cfg)
    if (spec.height, spec.width, spec.channels) != (cfg.height, cfg.width, cfg.channels):
        raise ShapeError("image spec geometry does not match the model config")
    dtype = np.dtype(tcfg.dtype)
    train_recs, test_recs = manifest.split("train"), manifest.split("test")
    if not train_recs:
        raise DataError("training split is empty")
    y_train = class_index(train_recs, class_ids)
    y_test = class_index(test_recs, class_ids)
    if images is None:
        x_train = render_records(manifest, train_recs, spec, dtype)
        x_test = render_records(manifest, test_recs, spec, dtype) if test_recs else None
    else:
        x_train, x_test = (None if a is None else np.asarray(a, dtype=dtype) for a in images)

    g = grid_of(manifest)
    grid = {"fs": g.fs, "f0": g.f0, "n_samples": g.n_samples}

    if resume is not None:
        params, rcfg, header, state = read_checkpoint(resume)
        if rcfg != cfg:
            raise ValueError("resume checkpoint was trained with a different model config")
        params = {n: Tensor(p.data.astype(dtype), requires_grad=True) for n, p in params.items()}
        history = TrainHistory.from_list(header["history"])
        start = header["epochs_done"]
    else:
        params = vit.init_model(cfg, dtype=dtype)
        state = AdamState()
        history = TrainHistory()
        start = 0

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    n = len(train_recs)
    for epoch in range(start, tcfg.epochs):
        t0 = time.perf_counter()
        order = make_rng(derive_seed(tcfg.seed, epoch)).permutation(n)
        loss_sum, correct = 0.0, 0
        n_batches = 0
        for bi, s in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[s:s + tcfg.batch_size]
            loss, grads, z = loss_and_grads(x_train[idx], y_train[idx], params, cfg)
            if not math.isfinite(loss):
                raise DivergenceError(epoch + 1, bi, loss)
            loss_sum += loss
            n_batches += 1
            correct += int((z.argmax(axis=1) == y_train[idx]).sum())
            adamw_step(params, grads, state, tcfg.lr, tcfg.weight_decay, tcfg.beta1, tcfg.beta2, tcfg.eps)
        if x_test is not None and len(x_test):
            eval_acc = float((evaluate(x_test, params, cfg, tcfg.eval_batch_size) == y_test).mean())
        else:
            eval_acc = float("nan")
        rec = EpochRecord(epoch + 1, loss_sum / n_batches, correct / n, eval_acc, time.perf_counter() - t0)
        history.records.append(rec)
        log.info("epoch %d  loss %.4f  train_acc %.3f  eval_acc %.3f  (%.1fs)",
                 rec.epoch, rec.train_loss, rec.train_acc, rec.eval_acc, rec.seconds)
        if out is not None and tcfg.checkpoint_every and (epoch + 1) % tcfg.checkpoint_every == 0:
            write_checkpoint(out / f"epoch_{epoch + 1:03d}.pqvt", params, cfg, tcfg, spec, grid,
                             history, epoch + 1, state, class_ids)

    if out is not None:
        write_checkpoint(out / "final.pqvt", params, cfg, tcfg, spec, grid, history,
                         max(start, tcfg.epochs), state, class_ids)
        history.to_csv(out / "history.csv")
    return params, history


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float]
    coords_checked: dict[str, int]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max(self.per_tensor.values())

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        lines = [f"{n:32s} {e:.3e} ({self.coords_checked[n]} coords)" for n, e in self.per_tensor.items()]
        lines.append(f"max relative error {self.max_rel_error:.3e} -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def randomized_params(cfg: vit.ViTConfig, seed: int = 0, std: float = 0.3) -> vit.Params:
    """Dense random float64 parameters so every path carries a sizeable gradient."""
    rng = make_rng(seed)
    params = {}
    for name, shape in vit.param_shapes(cfg).items():
        arr = rng.normal(0.0, std, size=shape)
        if name.endswith(".gamma"):
            arr += 1.0
        params[name] = Tensor(arr, requires_grad=True)
    return params


def rel_error(a, b, floor: float = 1e-6):
    # floor keeps exactly-zero gradients (e.g. key biases) from amplifying roundoff
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(cfg: vit.ViTConfig, image: np.ndarray, label: int, tolerance: float = 1e-4,
               n_coords: int = 20, h: float = 1e-5, seed: int = 0,
               params: vit.Params | None = None) -> GradCheckReport:
    """Compare tape gradients against central differences, coordinate by coordinate."""
    params = params if params is not None else randomized_params(cfg, seed)
    params = {n: Tensor(np.array(p.data, dtype=np.float64), requires_grad=True) for n, p in params.items()}
    image = np.asarray(image, dtype=np.float64)
    labels = np.array([label])

    def loss_at() -> float:
        return float(ad.cross_entropy(vit.logits(image[None], params, cfg), labels).data)

    _, grads, _ = loss_and_grads(image[None], labels, params, cfg)
    rng = make_rng(derive_seed(seed, 7))
    per_tensor, coverage = {}, {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        k = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = loss_at()
            flat[c] = orig - h
            down = loss_at()
            flat[c] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, float(rel_error(grads[name].reshape(-1)[c], numeric)))
        per_tensor[name] = worst
        coverage[name] = k
    return GradCheckReport(per_tensor, coverage, tolerance)


__all__ = [
    "AdamState", "DivergenceError", "EpochRecord", "GradCheckReport", "TrainConfig", "TrainHistory",
    "adamw_step", "evaluate", "grad_check", "read_checkpoint", "render_records", "train",
    "write_checkpoint", "load_checkpoint",
]
