"""On-disk PQD datasets: a float32 signal file plus a JSON-lines manifest.

Layout of a dataset directory::

    signals.f32      little-endian float32 samples, one contiguous record per signal
    manifest.jsonl   one JSON object per record (index, class_id, split, seed,
                     byte_offset, rng, params...)

Per-sample seeds depend only on (master seed, class id, within-class index),
so the bytes written do not depend on the order classes are listed in.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signals import N_CLASSES, PRNG_ID, DisturbanceClass, TimeGrid, derive_seed, generate_signal, make_rng

log = logging.getLogger(__name__)

SIGNAL_FILE = "signals.f32"
MANIFEST_FILE = "manifest.jsonl"


class DataError(ValueError):
    """Dataset content is missing or malformed."""


@dataclass(frozen=True)
class DatasetSpec:
    per_class: int
    seed: int = 0
    snr_db: float = 30.0
    test_fraction: float = 0.2
    classes: tuple[int, ...] = tuple(range(N_CLASSES))
    grid: TimeGrid = field(default_factory=TimeGrid)

    def __post_init__(self):
        if self.per_class < 0:
            raise ValueError("per_class must be >= 0")
        if not (0.0 <= self.test_fraction <= 1.0):
            raise ValueError("test_fraction must be in [0, 1]")
        for c in self.classes:
            DisturbanceClass(c)
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate classes")

    @property
    def total(self) -> int:
        return self.per_class * len(self.classes)

    def keys(self) -> list[tuple[int, int]]:
        """(class id, within-class index) for every sample, in canonical order."""
        return [(c, i) for c in sorted(self.classes) for i in range(self.per_class)]


@dataclass
class DatasetManifest:
    root: Path
    records: list[dict]
    n_samples: int

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> list[dict]:
        return [r for r in self.records if r["split"] == name]

    def labels(self, split: str | None = None) -> np.ndarray:
        recs = self.records if split is None else self.split(split)
        return np.array([r["class_id"] for r in recs], dtype=np.int64)

    def load_samples(self, records: list[dict] | None = None) -> np.ndarray:
        """Return an (n_records, n_samples) float32 array for ``records``."""
        records = self.records if records is None else records
        path = self.root / SIGNAL_FILE
        if not path.exists():
            raise DataError(f"missing signal file {path}")
        data = np.memmap(path, dtype="<f4", mode="r")
        out = np.empty((len(records), self.n_samples), dtype=np.float32)
        for i, r in enumerate(records):
            start = r["byte_offset"] // 4
            chunk = data[start:start + self.n_samples]
            if chunk.size != self.n_samples:
                raise DataError(f"record {r['index']}: signal data truncated in {path}")
            out[i] = chunk
        return out


def _sample_seed(master: int, class_id: int, index: int) -> int:
    return derive_seed(master, class_id, index)


def generate_dataset(spec: DatasetSpec, out_dir: str | Path) -> DatasetManifest:
    """Generate, shuffle, split and write a dataset; deterministic in ``spec``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    keys = spec.keys()
    order = make_rng(derive_seed(spec.seed, -1)).permutation(len(keys))
    n_train_per_class = spec.per_class - int(round(spec.per_class * spec.test_fraction))
    seen: Counter = Counter()

    n = spec.grid.n_samples
    record_bytes = 4 * n
    header = {"grid": {"fs": spec.grid.fs, "f0": spec.grid.f0, "n_samples": n},
              "snr_db": spec.snr_db, "master_seed": spec.seed}
    records = []
    buf = bytearray()
    for index, k in enumerate(order):
        class_id, within = keys[k]
        split = "train" if seen[class_id] < n_train_per_class else "test"
        seen[class_id] += 1
        seed = _sample_seed(spec.seed, class_id, within)
        sig = generate_signal(DisturbanceClass(class_id), seed, spec.snr_db, spec.grid)
        buf += sig.samples.astype("<f4").tobytes()
        rec = {
            "index": index,
            "class_id": class_id,
            "split": split,
            "seed": seed,
            "byte_offset": index * record_bytes,
            "rng": PRNG_ID,
        }
        rec.update({k2: v for k2, v in sig.params.to_dict().items() if k2 != "class_id"})
        rec.update(header)
        records.append(rec)

    try:
        (out / SIGNAL_FILE).write_bytes(bytes(buf))
        with open(out / MANIFEST_FILE, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc
    log.info("wrote %d records to %s", len(records), out)
    return DatasetManifest(out, records, n)


def load_manifest(root: str | Path) -> DatasetManifest:
    root = Path(root)
    path = root / MANIFEST_FILE
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    if not records:
        raise DataError(f"empty manifest {path}")
    n = int(records[0]["grid"]["n_samples"])
    return DatasetManifest(root, records, n)


def grid_of(manifest: DatasetManifest) -> TimeGrid:
    g = manifest.records[0]["grid"]
    return TimeGrid(fs=g["fs"], f0=g["f0"], n_samples=int(g["n_samples"]))


def split_sizes(manifest: DatasetManifest) -> dict[str, int]:
    return dict(Counter(r["split"] for r in manifest.records))


def class_counts(manifest: DatasetManifest) -> dict[int, int]:
    return dict(sorted(Counter(r["class_id"] for r in manifest.records).items()))

