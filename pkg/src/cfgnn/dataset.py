"""Measured/synthetic CSI datasets, multi-user sample construction and splits.

Measurement CSV layout (one row per position and AP)::

    position_id,ap_id,re,im
    0,0,1.2345e-04,-6.789e-05
    ...

A companion ``<stem>.meta.json`` holds ``num_positions``, ``num_aps`` and
``source`` (plus optional ``carrier_ghz`` and ``units``).  Values are
written with shortest round-trip float repr, so write/load is bit-exact.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import channel
from .errors import (
    InconsistentApCountError,
    InsufficientDataError,
    InvalidArgumentError,
    MalformedRowError,
    MeasurementFileNotFound,
    NonFiniteValueError,
    ParseError,
)

CSV_HEADER = ["position_id", "ap_id", "re", "im"]


@dataclass
class MeasurementSet:
    """``N`` single-user channel vectors ``h_i`` of length ``M``, shape ``(N, M)``."""

    vectors: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=complex)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidArgumentError(f"vectors must be a non-empty (N, M) array, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("measurement vectors contain non-finite entries")
        self.vectors = v
        self.metadata.setdefault("source", "measured")
        if "original_index" not in self.metadata:
            self.metadata["original_index"] = list(range(v.shape[0]))

    @property
    def num_positions(self):
        return self.vectors.shape[0]

    @property
    def num_aps(self):
        return self.vectors.shape[1]


@dataclass
class SampleSet:
    """Multi-user samples as strictly increasing index tuples, shape ``(S, K)``."""

    samples: np.ndarray
    num_positions: int
    seed: int | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.int64)
        if s.ndim != 2:
            raise InvalidArgumentError(f"samples must be 2-D, got shape {s.shape}")
        if s.size and (s.min() < 0 or s.max() >= self.num_positions):
            raise InvalidArgumentError("sample index out of bounds")
        if s.shape[1] > 1 and np.any(np.diff(s, axis=1) <= 0):
            raise InvalidArgumentError("sample tuples must be strictly increasing")
        self.samples = s

    @property
    def users_per_sample(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    def to_dict(self):
        return {"num_positions": self.num_positions, "users_per_sample": self.users_per_sample,
                "seed": self.seed, "samples": self.samples.tolist()}

    @classmethod
    def from_dict(cls, doc):
        k = doc["users_per_sample"]
        samples = np.asarray(doc["samples"], dtype=np.int64).reshape(-1, k)
        return cls(samples, doc["num_positions"], doc.get("seed"))


@dataclass
class SplitManifest:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    fractions: tuple = (0.8, 0.1, 0.1)
    seed: int | None = None

    def to_dict(self):
        return {"seed": self.seed, "fractions": list(self.fractions),
                "train": self.train.tolist(), "val": self.val.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(*(np.asarray(doc[k], dtype=np.int64) for k in ("train", "val", "test")),
                   tuple(doc["fractions"]), doc.get("seed"))


def save_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj.to_dict(), f)
        f.write("\n")


def metadata_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _parse_float(text, path, line, what):
    try:
        value = float(text)
    except ValueError:
        raise MalformedRowError(f"{what} is not a number: {text!r}", path, line) from None
    if not math.isfinite(value):
        raise NonFiniteValueError(f"non-finite {what}: {text!r}", path, line)
    return value


def _parse_index(text, path, line, what):
    try:
        value = int(text)
    except ValueError:
        raise MalformedRowError(f"{what} is not an integer: {text!r}", path, line) from None
    if value < 0:
        raise MalformedRowError(f"{what} must be non-negative, got {value}", path, line)
    return value


def load_measurements(path, unit_scale=1.0):
    """Parse a measurement CSV (and its metadata file, if present).

    Every entry is multiplied by ``unit_scale``.  Position ids must be
    ``0..N-1`` and every position must report the same AP ids.
    """
    path = Path(path)
    if not path.is_file():
        raise MeasurementFileNotFound("file not found", path)
    rows = {}
    first_line = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", path, 1)
        if [h.strip() for h in header] != CSV_HEADER:
            raise MalformedRowError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}",
                                    path, 1)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise MalformedRowError(f"expected 4 fields, got {len(row)}", path, line)
            pos = _parse_index(row[0], path, line, "position_id")
            ap = _parse_index(row[1], path, line, "ap_id")
            value = complex(_parse_float(row[2], path, line, "re"),
                            _parse_float(row[3], path, line, "im"))
            per_pos = rows.setdefault(pos, {})
            first_line.setdefault(pos, line)
            if ap in per_pos:
                raise MalformedRowError(f"duplicate entry for position {pos}, AP {ap}", path, line)
            per_pos[ap] = value
    if not rows:
        raise ParseError("no measurement rows", path, 2)
    positions = sorted(rows)
    if positions != list(range(len(positions))):
        missing = sorted(set(range(positions[-1] + 1)) - set(positions))
        raise MalformedRowError(f"position ids must be contiguous from 0; missing {missing[:5]}", path)
    ap_ids = sorted(rows[0])
    for pos in positions:
        if sorted(rows[pos]) != ap_ids:
            raise InconsistentApCountError(
                f"position {pos} has {len(rows[pos])} AP entries, expected {len(ap_ids)}",
                path, first_line[pos], position_id=pos)
    if ap_ids != list(range(len(ap_ids))):
        raise MalformedRowError("ap ids must be contiguous from 0", path)
    vectors = np.array([[rows[p][a] for a in ap_ids] for p in positions])
    if unit_scale != 1.0:
        vectors = vectors * unit_scale

    metadata = {"source": "measured"}
    meta_file = metadata_path(path)
    if meta_file.is_file():
        with open(meta_file) as f:
            meta = json.load(f)
        if meta.get("num_positions", len(positions)) != len(positions):
            raise ParseError(f"metadata says {meta['num_positions']} positions, file has "
                             f"{len(positions)}", meta_file)
        if meta.get("num_aps", len(ap_ids)) != len(ap_ids):
            raise ParseError(f"metadata says {meta['num_aps']} APs, file has {len(ap_ids)}",
                             meta_file)
        metadata.update({k: v for k, v in meta.items() if k not in ("num_positions", "num_aps")})
    if unit_scale != 1.0:
        metadata["unit_scale"] = unit_scale
    return MeasurementSet(vectors, metadata)


def write_measurements(ms, path):
    """Write ``ms`` as CSV plus the companion metadata document."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for pos, vec in enumerate(ms.vectors):
            for ap, value in enumerate(vec):
                writer.writerow([pos, ap, repr(float(value.real)), repr(float(value.imag))])
    meta = {"num_positions": ms.num_positions, "num_aps": ms.num_aps}
    meta.update({k: v for k, v in ms.metadata.items() if k != "original_index"})
    with open(metadata_path(path), "w") as f:
        json.dump(meta, f, indent=1)
        f.write("\n")


def build_two_user_pairs(ms):
    """All unordered pairs ``(i, j)``, ``i < j``: ``C(N, 2)`` samples."""
    n = ms.num_positions
    if n < 2:
        raise InsufficientDataError(f"need at least 2 positions to form pairs, got {n}")
    i, j = np.triu_indices(n, k=1)
    return SampleSet(np.stack([i, j], axis=1), n)


def select_top_by_strength(ms, k):
    """The ``k`` strongest vectors by Euclidean norm, ties going to the lower index."""
    n = ms.num_positions
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"cannot select {k} of {n} positions")
    norms = np.linalg.norm(ms.vectors, axis=1)
    order = np.argsort(-norms, kind="stable")[:k]
    parent = ms.metadata["original_index"]
    meta = dict(ms.metadata)
    meta["original_index"] = [parent[i] for i in order]
    return MeasurementSet(ms.vectors[order], meta)


def build_k_user_samples(ms, users, target_count, rng):
    """``target_count`` distinct ``users``-subsets drawn uniformly without replacement.

    Draws random subsets in batches, canonicalizes them as sorted tuples and
    keeps first occurrences in draw order until enough distinct ones exist.
    """
    n = ms.num_positions
    if users < 1 or users > n:
        raise InsufficientDataError(f"cannot form {users}-user samples from {n} positions")
    total = math.comb(n, users)
    if target_count > total:
        raise InsufficientDataError(
            f"requested {target_count} samples but only C({n},{users})={total} exist")
    if target_count < 0:
        raise InvalidArgumentError("target_count must be non-negative")
    radix = np.int64(n) ** np.arange(users, dtype=np.int64)
    seen = set()
    kept = []
    while len(kept) < target_count:
        need = target_count - len(kept)
        batch = min(65536, need + need // 2 + 16)
        tuples = np.sort(np.argpartition(rng.random((batch, n)), users - 1, axis=1)[:, :users],
                         axis=1)
        for row, code in zip(tuples, (tuples @ radix).tolist()):
            if code not in seen:
                seen.add(code)
                kept.append(row)
                if len(kept) == target_count:
                    break
    samples = np.array(kept, dtype=np.int64).reshape(-1, users)
    return SampleSet(samples, n)


def build_four_user_samples(ms, target_count, rng):
    return build_k_user_samples(ms, 4, target_count, rng)


def split(num_samples, fractions=(0.8, 0.1, 0.1), seed=0):
    """Shuffle indices under ``seed`` and slice ``floor(f0 N)`` / ``floor(f1 N)`` / rest."""
    if isinstance(num_samples, SampleSet):
        num_samples = len(num_samples)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise InvalidArgumentError(f"fractions must be three non-negative values summing to 1, "
                                   f"got {fractions}")
    order = np.random.default_rng(seed).permutation(num_samples)
    # the epsilon keeps e.g. 0.8 * 10 from flooring to 7 on representation error
    n_train = math.floor(fractions[0] * num_samples + 1e-9)
    n_val = math.floor(fractions[1] * num_samples + 1e-9)
    return SplitManifest(order[:n_train], order[n_train:n_train + n_val],
                         order[n_train + n_val:], tuple(fractions), seed)


def materialize(ms, indices):
    """Stack the rows ``h_i`` for a strictly increasing index tuple into ``(K, M)``."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise InvalidArgumentError("indices must be a non-empty 1-D tuple")
    if np.any(np.diff(idx) <= 0):
        raise InvalidArgumentError(f"index tuple must be strictly increasing, got {tuple(idx)}")
    if idx[0] < 0 or idx[-1] >= ms.num_positions:
        raise InvalidArgumentError(f"index out of bounds for {ms.num_positions} positions")
    return ms.vectors[idx]


def materialize_all(ms, sample_set, rows=None):
    """Channel batch ``(S, K, M)`` for the given sample rows (all by default)."""
    samples = sample_set.samples if rows is None else sample_set.samples[rows]
    return ms.vectors[samples]


@dataclass
class SyntheticSpec:
    area_side_m: float = 10.0
    carrier_ghz: float = 3.5
    d_min_m: float = 1.0

    @property
    def path_loss(self):
        return channel.PathLossParams(carrier_ghz=self.carrier_ghz, d_min=self.d_min_m)


def generate_synthetic_dataset(count, m, k, spec, rng):
    """``count`` independent geometry + fading draws, shape ``(count, K, M)``."""
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    params = spec.path_loss
    out = np.empty((count, k, m), dtype=complex)
    for i in range(count):
        geom = channel.sample_geometry(spec.area_side_m, m, k, rng)
        out[i] = channel.generate_channel(geom, params, rng)
    return out


def simulate_measurements(num_positions, m, spec, rng, source="simulated-measurement"):
    """A measurement-style set: fixed APs, one UE moved to ``num_positions`` spots.

    Stands in for testbed captures when exercising the measured-data path.
    """
    aps = rng.uniform(0.0, spec.area_side_m, size=(m, 2))
    params = spec.path_loss
    vectors = np.empty((num_positions, m), dtype=complex)
    for i in range(num_positions):
        ue = rng.uniform(0.0, spec.area_side_m, size=(1, 2))
        vectors[i] = channel.generate_channel(channel.Geometry(aps, ue), params, rng)[0]
    return MeasurementSet(vectors, {"source": source, "carrier_ghz": spec.carrier_ghz,
                                    "units": "linear complex gain"})


def save_channels(path, channels, seed=None, source="synthetic"):
    np.savez(path, channels=channels, seed=-1 if seed is None else seed, source=source)


def load_channels(path):
    with np.load(path) as data:
        return data["channels"]
