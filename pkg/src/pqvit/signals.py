"""Parametric synthesis of the 17 power-quality disturbance classes.

All waveforms are per-unit voltages on a :class:`TimeGrid`.  With
``w(t) = u(t - t1) - u(t - t2)`` the event window and ``ω = 2π f0``:

======  =============================  ==========================================
class   name                           clean model
======  =============================  ==========================================
0       normal                         sin(ωt + φ)
1       sag                            (1 - α w) sin
2       swell                          (1 + β w) sin
3       interruption                   (1 - α w) sin, α in [0.9, 1]
4       transient/spike/impulse        sin + k sign(sin) Σ rectangular pulses
5       oscillatory transient          sin + k e^{-(t-t1)/τ} sin(2π f_tr (t-t1)) w
6       harmonics                      sin + Σ_{h=3,5,7} a_h sin(hωt + θ_h)
7       harmonics & sag                (1 - α w)(sin + harmonics)
8       harmonics & swell              (1 + β w)(sin + harmonics)
9       flicker                        (1 + λ sin(2π f_f t)) sin
10      flicker & sag                  flicker envelope × sag envelope × sin
11      flicker & swell                flicker envelope × swell envelope × sin
12      sag & oscillatory transient    sag + transient starting at t1
13      swell & oscillatory transient  swell + transient starting at t1
14      sag & harmonics                (1 - α w) sin + w · harmonics
15      swell & harmonics              (1 + β w) sin + w · harmonics
16      notch                          sin - k sign(sin) Σ per-cycle pulses
======  =============================  ==========================================

Classes 7/8 carry harmonics over the whole record; 14/15 confine them to
the event window, which is the only thing telling the pairs apart.

Randomness comes from numpy's ``PCG64`` bit generator; the identifier is
exported as :data:`PRNG_ID` and written into dataset manifests.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from enum import IntEnum

import numpy as np

PRNG_ID = "numpy.PCG64"

HARMONIC_ORDERS = (3, 5, 7)


class ParameterError(ValueError):
    """Parameters do not belong to the requested class."""


class RangeError(ValueError):
    """A parameter lies outside its admissible range."""


class DegenerateSignalError(ValueError):
    """Signal power is zero, so an SNR cannot be defined."""


class DisturbanceClass(IntEnum):
    NORMAL = 0
    SAG = 1
    SWELL = 2
    INTERRUPTION = 3
    TRANSIENT = 4
    OSCILLATORY_TRANSIENT = 5
    HARMONICS = 6
    HARMONICS_SAG = 7
    HARMONICS_SWELL = 8
    FLICKER = 9
    FLICKER_SAG = 10
    FLICKER_SWELL = 11
    SAG_OSC_TRANSIENT = 12
    SWELL_OSC_TRANSIENT = 13
    SAG_HARMONICS = 14
    SWELL_HARMONICS = 15
    NOTCH = 16

    @property
    def label(self) -> str:
        return CLASS_NAMES[self]


CLASS_NAMES = {
    DisturbanceClass.NORMAL: "Normal",
    DisturbanceClass.SAG: "Sag",
    DisturbanceClass.SWELL: "Swell",
    DisturbanceClass.INTERRUPTION: "Interruption",
    DisturbanceClass.TRANSIENT: "Transients/Spike/Impulse",
    DisturbanceClass.OSCILLATORY_TRANSIENT: "Oscillatory Transient",
    DisturbanceClass.HARMONICS: "Harmonics",
    DisturbanceClass.HARMONICS_SAG: "Harmonics & Sag",
    DisturbanceClass.HARMONICS_SWELL: "Harmonics & Swell",
    DisturbanceClass.FLICKER: "Flicker",
    DisturbanceClass.FLICKER_SAG: "Flicker & Sag",
    DisturbanceClass.FLICKER_SWELL: "Flicker & Swell",
    DisturbanceClass.SAG_OSC_TRANSIENT: "Sag & Oscillatory Transient",
    DisturbanceClass.SWELL_OSC_TRANSIENT: "Swell & Oscillatory Transient",
    DisturbanceClass.SAG_HARMONICS: "Sag & Harmonics",
    DisturbanceClass.SWELL_HARMONICS: "Swell & Harmonics",
    DisturbanceClass.NOTCH: "Notch",
}

N_CLASSES = len(DisturbanceClass)

C = DisturbanceClass
_SAG = {C.SAG, C.INTERRUPTION, C.HARMONICS_SAG, C.FLICKER_SAG, C.SAG_OSC_TRANSIENT, C.SAG_HARMONICS}
_SWELL = {C.SWELL, C.HARMONICS_SWELL, C.FLICKER_SWELL, C.SWELL_OSC_TRANSIENT, C.SWELL_HARMONICS}
_HARM_GLOBAL = {C.HARMONICS, C.HARMONICS_SAG, C.HARMONICS_SWELL}
_HARM_WINDOWED = {C.SAG_HARMONICS, C.SWELL_HARMONICS}
_FLICKER = {C.FLICKER, C.FLICKER_SAG, C.FLICKER_SWELL}
_OSC = {C.OSCILLATORY_TRANSIENT, C.SAG_OSC_TRANSIENT, C.SWELL_OSC_TRANSIENT}
_WINDOWED = _SAG | _SWELL | _OSC | _HARM_WINDOWED

# Sampling ranges, all closed intervals.
RANGES = {
    "alpha": (0.1, 0.9),
    "alpha_interruption": (0.9, 1.0),
    "beta": (0.1, 0.8),
    "beta_flicker_swell": (0.25, 0.8),
    "harmonic_amp": (0.05, 0.15),
    "lambda": (0.05, 0.1),
    "f_flicker": (8.0, 25.0),
    "k_impulse": (0.2, 0.8),
    "k_osc": (0.1, 0.8),
    "tau_tr": (0.008, 0.040),
    "f_tr": (300.0, 900.0),
    "pulse_width": (0.01, 0.05),
    "n_pulses": (1, 3),
    "k_notch": (0.1, 0.4),
    "notch_width": (0.01, 0.05),
    "event_cycles": (1.0, 9.0),
}


@dataclass(frozen=True)
class TimeGrid:
    fs: float = 3200.0
    f0: float = 50.0
    n_samples: int = 650

    def __post_init__(self):
        if not self.fs > 2 * self.f0:
            raise RangeError(f"fs={self.fs} must exceed the Nyquist rate 2*f0={2 * self.f0}")
        if self.f0 <= 0 or self.n_samples < 1:
            raise RangeError("f0 must be positive and n_samples >= 1")

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    @property
    def period(self) -> float:
        return 1.0 / self.f0

    def times(self) -> np.ndarray:
        return np.arange(self.n_samples, dtype=np.float64) / self.fs


@dataclass(frozen=True)
class DisturbanceParams:
    """Generation parameters; fields irrelevant to ``cls`` stay ``None``.

    ``pulse_starts``/``pulse_width`` describe class-4 impulses and
    ``notch_phase`` the waveform angle at which each class-16 notch opens.
    """

    cls: DisturbanceClass
    phase0: float = 0.0
    alpha: float | None = None
    beta: float | None = None
    t1: float | None = None
    t2: float | None = None
    harmonic_amps: tuple[float, ...] | None = None
    harmonic_phases: tuple[float, ...] | None = None
    lam: float | None = None
    f_flicker: float | None = None
    k_tr: float | None = None
    f_tr: float | None = None
    tau_tr: float | None = None
    pulse_starts: tuple[float, ...] | None = None
    pulse_width: float | None = None
    k_notch: float | None = None
    notch_width: float | None = None
    notch_phase: float | None = None

    def to_dict(self) -> dict:
        out = {"class_id": int(self.cls)}
        for k, v in asdict(self).items():
            if k == "cls" or v is None:
                continue
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DisturbanceParams":
        names = {f.name for f in fields(cls)} - {"cls"}
        kw = {}
        for k, v in d.items():
            if k in names:
                kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(cls=DisturbanceClass(d["class_id"]), **kw)


@dataclass
class Signal:
    samples: np.ndarray
    label: DisturbanceClass
    params: DisturbanceParams
    seed: int | None = None
    grid: TimeGrid = field(default_factory=TimeGrid)


def required_fields(cls: DisturbanceClass) -> set[str]:
    """Names of the parameter fields a class uses (besides ``phase0``)."""
    cls = DisturbanceClass(cls)
    req = set()
    if cls in _WINDOWED:
        req |= {"t1", "t2"}
    if cls in _SAG:
        req.add("alpha")
    if cls in _SWELL:
        req.add("beta")
    if cls in _HARM_GLOBAL | _HARM_WINDOWED:
        req |= {"harmonic_amps", "harmonic_phases"}
    if cls in _FLICKER:
        req |= {"lam", "f_flicker"}
    if cls in _OSC:
        req |= {"k_tr", "f_tr", "tau_tr"}
    if cls == C.TRANSIENT:
        req |= {"k_tr", "pulse_starts", "pulse_width"}
    if cls == C.NOTCH:
        req |= {"k_notch", "notch_width", "notch_phase"}
    return req


_OPTIONAL = {"phase0"}


def _check_range(name, value, lo, hi):
    if not (lo <= value <= hi):
        raise RangeError(f"{name}={value} outside [{lo}, {hi}]")


def validate_params(params: DisturbanceParams, grid: TimeGrid) -> None:
    """Raise :class:`ParameterError` or :class:`RangeError` on invalid params."""
    cls = params.cls
    req = required_fields(cls)
    for f in fields(params):
        if f.name == "cls" or f.name in _OPTIONAL:
            continue
        present = getattr(params, f.name) is not None
        if f.name in req and not present:
            raise ParameterError(f"class {int(cls)} requires '{f.name}'")
        if f.name not in req and present:
            raise ParameterError(f"'{f.name}' is not a parameter of class {int(cls)}")
    p = params
    if not (0.0 <= p.phase0 < 2 * math.pi):
        raise RangeError(f"phase0={p.phase0} outside [0, 2π)")
    if "t1" in req:
        if not (0.0 <= p.t1 < p.t2 <= grid.duration + 1e-12):
            raise RangeError(f"need 0 <= t1 < t2 <= {grid.duration}, got t1={p.t1}, t2={p.t2}")
    if "alpha" in req:
        key = "alpha_interruption" if cls == C.INTERRUPTION else "alpha"
        _check_range("alpha", p.alpha, *RANGES[key])
    if "beta" in req:
        key = "beta_flicker_swell" if cls == C.FLICKER_SWELL else "beta"
        _check_range("beta", p.beta, *RANGES[key])
    if "harmonic_amps" in req:
        if len(p.harmonic_amps) != len(HARMONIC_ORDERS) or len(p.harmonic_phases) != len(HARMONIC_ORDERS):
            raise ParameterError("need one amplitude and one phase per harmonic order 3, 5, 7")
        for a in p.harmonic_amps:
            _check_range("harmonic amplitude", a, *RANGES["harmonic_amp"])
    if "lam" in req:
        _check_range("lambda", p.lam, *RANGES["lambda"])
        _check_range("f_flicker", p.f_flicker, *RANGES["f_flicker"])
    if cls in _OSC:
        _check_range("k_tr", p.k_tr, *RANGES["k_osc"])
        _check_range("tau_tr", p.tau_tr, *RANGES["tau_tr"])
        _check_range("f_tr", p.f_tr, *RANGES["f_tr"])
    if cls == C.TRANSIENT:
        _check_range("k_tr", p.k_tr, *RANGES["k_impulse"])
        _check_range("pulse_width", p.pulse_width, *RANGES["pulse_width"])
        _check_range("pulse count", len(p.pulse_starts), *RANGES["n_pulses"])
        for s in p.pulse_starts:
            _check_range("pulse start", s, 0.0, grid.duration)
    if cls == C.NOTCH:
        _check_range("k_notch", p.k_notch, *RANGES["k_notch"])
        _check_range("notch_width", p.notch_width, *RANGES["notch_width"])
        _check_range("notch_phase", p.notch_phase, 0.0, 2 * math.pi)


def synthesize_clean(params: DisturbanceParams, grid: TimeGrid = TimeGrid()) -> Signal:
    """Evaluate the noiseless waveform of ``params.cls`` on ``grid``."""
    validate_params(params, grid)
    p, cls = params, params.cls
    t = grid.times()
    omega = 2 * math.pi * grid.f0
    theta = omega * t + p.phase0
    base = np.sin(theta)

    if "t1" in required_fields(cls):
        window = ((t >= p.t1) & (t < p.t2)).astype(np.float64)
    else:
        window = np.zeros_like(t)

    carrier = base
    if cls in _HARM_GLOBAL:
        carrier = base + _harmonics(theta, p)

    envelope = np.ones_like(t)
    if cls in _SAG:
        envelope = envelope * (1.0 - p.alpha * window)
    if cls in _SWELL:
        envelope = envelope * (1.0 + p.beta * window)
    if cls in _FLICKER:
        envelope = envelope * (1.0 + p.lam * np.sin(2 * math.pi * p.f_flicker * t))

    y = envelope * carrier
    if cls in _HARM_WINDOWED:
        y = y + window * _harmonics(theta, p)
    if cls in _OSC:
        dt = np.clip(t - p.t1, 0.0, None)
        y = y + p.k_tr * np.exp(-dt / p.tau_tr) * np.sin(2 * math.pi * p.f_tr * dt) * window
    if cls == C.TRANSIENT:
        width = p.pulse_width * grid.period
        pulses = np.zeros_like(t)
        for s in p.pulse_starts:
            pulses += (t >= s) & (t < s + width)
        y = y + p.k_tr * np.sign(base) * pulses
    if cls == C.NOTCH:
        angle = np.mod(theta - p.notch_phase, 2 * math.pi)
        active = (angle < 2 * math.pi * p.notch_width).astype(np.float64)
        y = y - np.sign(base) * p.k_notch * active
    return Signal(samples=y, label=DisturbanceClass(cls), params=p, grid=grid)


def _harmonics(theta: np.ndarray, p: DisturbanceParams) -> np.ndarray:
    out = np.zeros_like(theta)
    for h, a, ph in zip(HARMONIC_ORDERS, p.harmonic_amps, p.harmonic_phases):
        out += a * np.sin(h * theta + ph)
    return out


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed from a tuple of integers (BLAKE2b over uint64 LE, mod 2**64)."""
    payload = struct.pack(f"<{len(parts)}Q", *(p & 0xFFFFFFFFFFFFFFFF for p in parts))
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def sample_params(cls: DisturbanceClass, seed: int, grid: TimeGrid = TimeGrid()) -> DisturbanceParams:
    """Draw uniform parameters for ``cls``; same (cls, seed) gives same params."""
    cls = DisturbanceClass(cls)
    rng = make_rng(seed)
    u = rng.uniform
    kw: dict = {"phase0": float(u(0.0, 2 * math.pi))}
    req = required_fields(cls)

    if "t1" in req:
        cycles = u(*RANGES["event_cycles"])
        dur = min(cycles * grid.period, grid.duration)
        t1 = float(u(0.0, grid.duration - dur))
        kw["t1"], kw["t2"] = t1, t1 + dur
    if "alpha" in req:
        kw["alpha"] = float(u(*RANGES["alpha_interruption" if cls == C.INTERRUPTION else "alpha"]))
    if "beta" in req:
        kw["beta"] = float(u(*RANGES["beta_flicker_swell" if cls == C.FLICKER_SWELL else "beta"]))
    if "harmonic_amps" in req:
        kw["harmonic_amps"] = tuple(float(a) for a in u(*RANGES["harmonic_amp"], size=3))
        kw["harmonic_phases"] = tuple(float(a) for a in u(0.0, 2 * math.pi, size=3))
    if "lam" in req:
        kw["lam"] = float(u(*RANGES["lambda"]))
        kw["f_flicker"] = float(u(*RANGES["f_flicker"]))
    if cls in _OSC:
        kw["k_tr"] = float(u(*RANGES["k_osc"]))
        kw["tau_tr"] = float(u(*RANGES["tau_tr"]))
        kw["f_tr"] = float(u(*RANGES["f_tr"]))
    if cls == C.TRANSIENT:
        kw["k_tr"] = float(u(*RANGES["k_impulse"]))
        width = float(u(*RANGES["pulse_width"]))
        lo, hi = RANGES["n_pulses"]
        n = int(rng.integers(lo, hi + 1))
        last = grid.duration - width * grid.period
        kw["pulse_width"] = width
        kw["pulse_starts"] = tuple(sorted(float(s) for s in u(0.0, last, size=n)))
    if cls == C.NOTCH:
        kw["k_notch"] = float(u(*RANGES["k_notch"]))
        kw["notch_width"] = float(u(*RANGES["notch_width"]))
        kw["notch_phase"] = float(u(0.0, 2 * math.pi))
    return DisturbanceParams(cls=cls, **kw)


def add_awgn(signal: Signal, snr_db: float, seed: int) -> Signal:
    """Add white Gaussian noise at ``snr_db`` relative to the signal's mean square."""
    x = np.asarray(signal.samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    power = float(np.mean(x * x))
    if power == 0.0:
        raise DegenerateSignalError("signal power is zero; SNR undefined")
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    noise = make_rng(seed).standard_normal(x.size) * sigma
    return replace(signal, samples=x + noise)


def generate_signal(cls: DisturbanceClass, seed: int, snr_db: float | None = 30.0,
                    grid: TimeGrid = TimeGrid()) -> Signal:
    """Sample parameters, synthesise, and (optionally) add noise for one record."""
    params = sample_params(cls, seed, grid)
    sig = synthesize_clean(params, grid)
    if snr_db is not None:
        sig = add_awgn(sig, snr_db, derive_seed(seed, 1))
    sig.seed = seed
    return sig
