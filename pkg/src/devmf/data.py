"""Observation file loading, splits, per-slice normalization, synthesis.

File formats (all plain text):

  * ``movielens_dat``  lines ``user::item::rating[::timestamp]``,
    timestamp ignored
  * ``csv_triplet``    lines ``row,col,value``, header row optional
  * ``csv_quad``       lines ``i,j,k,value``, header row optional

Raw ids are arbitrary tokens; loading remaps them to dense 0-based
indices in first-seen order and keeps the mapping (persisted as a
``raw_id,dense_id`` CSV sidecar per mode) so later files can be mapped
through the same vocabulary.

Synthesis draws exactly-low-rank ground truth with a choice of noise:
none, homoscedastic, or a non-negative low-rank variance field with a
constant floor, so the generating process matches what the variance
model can represent.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ObservationSet
from .errors import (ConfigError, DegenerateSliceError, DuplicateEntryError,
                     ParseError)

# format name -> (separator, number of index modes, may carry one extra
# trailing field that is ignored)
FORMATS = {
    "movielens_dat": ("::", 2, True),
    "csv_triplet": (",", 2, False),
    "csv_quad": (",", 3, False),
}

NOISE_KINDS = ("none", "homoscedastic", "lowrank_hetero")


# ---------------------------------------------------------------------------
# loading

def load_raw_entries(path, fmt):
    """Parse a file into ((raw ids...), value) tuples without remapping.

    Raises ParseError (with line number) on malformed lines; a leading
    header row is tolerated for the csv formats.
    """
    if fmt not in FORMATS:
        raise ConfigError(f"unknown format {fmt!r}; choose from {sorted(FORMATS)}")
    sep, n_modes, extra_ok = FORMATS[fmt]
    entries = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(sep)]
            if len(parts) < n_modes + 1 or (len(parts) > n_modes + 1 and not extra_ok) \
                    or len(parts) > n_modes + 2:
                raise ParseError(path, line_no,
                                 f"expected {n_modes + 1} {sep!r}-separated fields, "
                                 f"got {len(parts)}")
            try:
                value = float(parts[n_modes])
            except ValueError:
                if line_no == 1 and sep == ",":
                    continue  # header row
                raise ParseError(path, line_no,
                                 f"value field {parts[n_modes]!r} is not a number") from None
            ids = tuple(parts[:n_modes])
            if any(not t for t in ids):
                raise ParseError(path, line_no, "empty id field")
            entries.append((ids, value))
    return entries


def remap_entries(entries, n_modes, id_maps=None):
    """Assign dense 0-based ids in first-seen order; returns
    (idx array, values array, id_maps).  Pass existing id_maps to extend
    a shared vocabulary."""
    if id_maps is None:
        id_maps = [dict() for _ in range(n_modes)]
    idx = np.empty((len(entries), n_modes), dtype=np.int64)
    values = np.empty(len(entries))
    for pos, (ids, value) in enumerate(entries):
        for m, raw in enumerate(ids):
            idx[pos, m] = id_maps[m].setdefault(raw, len(id_maps[m]))
        values[pos] = value
    return idx, values, id_maps


def load_observations(path, fmt):
    """Load a file into an ObservationSet with dense first-seen ids.

    Duplicate (row, col[, tube]) tuples raise DuplicateEntryError naming
    the raw ids.
    """
    entries = load_raw_entries(path, fmt)
    n_modes = FORMATS[fmt][1]
    idx, values, id_maps = remap_entries(entries, n_modes)
    seen = {}
    for pos, (ids, _) in enumerate(entries):
        prev = seen.setdefault(ids, pos)
        if prev != pos:
            raise DuplicateEntryError(ids)
    mode_sizes = tuple(len(m) for m in id_maps)
    return ObservationSet(mode_sizes, idx, values, id_maps=id_maps)


def map_through(entries, id_maps):
    """Map raw entries through existing id maps.

    Returns (idx, values, mapped) where mapped is a boolean mask; rows of
    idx for unmapped entries hold -1 in the unknown mode(s).
    """
    n_modes = len(id_maps)
    idx = np.full((len(entries), n_modes), -1, dtype=np.int64)
    values = np.empty(len(entries))
    for pos, (ids, value) in enumerate(entries):
        values[pos] = value
        for m, raw in enumerate(ids):
            idx[pos, m] = id_maps[m].get(raw, -1)
    mapped = np.all(idx >= 0, axis=1)
    return idx, values, mapped


def write_entries(path, fmt, entries):
    """Write ((raw ids...), value) tuples in the given format (no header)."""
    sep = FORMATS[fmt][0]
    with open(path, "w") as fh:
        for ids, value in entries:
            fh.write(sep.join([*ids, f"{value:.17g}"]) + "\n")


def save_id_maps(prefix, id_maps):
    """Persist one `raw_id,dense_id` CSV per mode as <prefix>.mapK.csv."""
    paths = []
    for m, mapping in enumerate(id_maps):
        p = f"{prefix}.map{m}.csv"
        with open(p, "w") as fh:
            fh.write("raw_id,dense_id\n")
            for raw, dense in sorted(mapping.items(), key=lambda kv: kv[1]):
                fh.write(f"{raw},{dense}\n")
        paths.append(p)
    return paths


def load_id_maps(prefix, n_modes):
    maps = []
    for m in range(n_modes):
        p = f"{prefix}.map{m}.csv"
        mapping = {}
        with open(p) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or (line_no == 1 and line == "raw_id,dense_id"):
                    continue
                raw, _, dense = line.rpartition(",")
                try:
                    mapping[raw] = int(dense)
                except ValueError:
                    raise ParseError(p, line_no, f"bad dense id {dense!r}") from None
        maps.append(mapping)
    return maps


# ---------------------------------------------------------------------------
# splitting

@dataclass
class SplitSpec:
    test_fraction: float = 0.1
    val_fraction_of_train: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in [0, 1)")
        if not 0.0 <= self.val_fraction_of_train < 1.0:
            raise ConfigError("val_fraction_of_train must be in [0, 1)")


def split_positions(n, spec: SplitSpec):
    """Permute positions 0..n-1 and cut into (train, val, test)."""
    if n == 0:
        raise ConfigError("cannot split an empty observation set")
    n_test = int(round(n * spec.test_fraction))
    n_val = int(round((n - n_test) * spec.val_fraction_of_train))
    if n_test + n_val >= n:
        raise ConfigError("split fractions leave no training data")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[n_test + n_val:], perm[n_test:n_test + n_val], perm[:n_test]


def split(obs: ObservationSet, spec: SplitSpec):
    """Disjoint (train, val, test) whose union is obs; deterministic per seed."""
    train_pos, val_pos, test_pos = split_positions(len(obs), spec)
    return obs.subset(train_pos), obs.subset(val_pos), obs.subset(test_pos)


# ---------------------------------------------------------------------------
# per-slice standard scores

@dataclass
class NormalizationStats:
    """Per-slice population mean/std along sensor_mode; std 1, mean 0 for
    slices with no observations (identity transform)."""
    sensor_mode: int
    means: np.ndarray
    stds: np.ndarray

    def apply(self, values, idx):
        s = idx[:, self.sensor_mode]
        return (values - self.means[s]) / self.stds[s]

    def invert(self, values, idx):
        s = idx[:, self.sensor_mode]
        return values * self.stds[s] + self.means[s]


def normalize_per_sensor(obs: ObservationSet, sensor_mode: int):
    """Standard-score each slice along sensor_mode; returns (new obs, stats).

    A slice whose observed values are all equal has no scale and raises
    DegenerateSliceError.
    """
    if not 0 <= sensor_mode < obs.n_modes:
        raise ConfigError(f"sensor_mode {sensor_mode} out of range")
    k = obs.mode_sizes[sensor_mode]
    ids = obs.idx[:, sensor_mode]
    count = np.bincount(ids, minlength=k).astype(np.float64)
    lo = np.full(k, np.inf)
    hi = np.full(k, -np.inf)
    np.minimum.at(lo, ids, obs.values)
    np.maximum.at(hi, ids, obs.values)
    constant = (count > 0) & (lo == hi)
    if np.any(constant):
        raise DegenerateSliceError(int(np.argmax(constant)))
    denom = np.maximum(count, 1.0)
    means = np.bincount(ids, weights=obs.values, minlength=k) / denom
    centered = obs.values - means[ids]
    variances = np.bincount(ids, weights=centered * centered, minlength=k) / denom
    stds = np.sqrt(variances)
    stds[count == 0] = 1.0
    stats = NormalizationStats(sensor_mode, means, stds)
    out = ObservationSet(obs.mode_sizes, obs.idx.copy(),
                         stats.apply(obs.values, obs.idx), id_maps=obs.id_maps)
    return out, stats


# ---------------------------------------------------------------------------
# synthesis

@dataclass
class SyntheticSpec:
    mode_sizes: tuple
    rank_mean: int
    rank_dev: int = 2
    observed_fraction: float = 0.3
    noise_kind: str = "none"
    noise_param: float = 0.01  # sigma^2 (homoscedastic) or floor (lowrank_hetero)
    seed: int = 0

    def __post_init__(self):
        self.mode_sizes = tuple(int(n) for n in self.mode_sizes)
        if len(self.mode_sizes) not in (2, 3) or min(self.mode_sizes) < 1:
            raise ConfigError("mode_sizes must be 2 or 3 positive integers")
        if self.rank_mean < 1 or self.rank_dev < 1:
            raise ConfigError("ranks must be positive")
        if not 0.0 < self.observed_fraction <= 1.0:
            raise ConfigError("observed_fraction must be in (0, 1]")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"noise_kind must be one of {NOISE_KINDS}")
        if self.noise_param < 0.0:
            raise ConfigError("noise_param must be non-negative")


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    obs: ObservationSet          # noisy values at the observed cells
    clean: np.ndarray            # full noiseless field
    variance: np.ndarray         # full true-variance field
    mean_factors: list
    dev_factors: list = field(default=None)

    def clean_at(self, idx):
        return self.clean[tuple(idx.T)]

    def variance_at(self, idx):
        return self.variance[tuple(idx.T)]


def _low_rank_field(factors):
    subs = "ir,jr->ij" if len(factors) == 2 else "ir,jr,kr->ijk"
    return np.einsum(subs, *factors)


def synthesize(spec: SyntheticSpec) -> SyntheticData:
    """Draw an exactly-low-rank ground truth and noisy observations.

    Mean factors are uniform in [-1, 1]/sqrt(rank) per mode (signal
    variance O(1)); for lowrank_hetero the variance field is a product
    of uniform [0, 1]/sqrt(rank_dev) factors plus the noise_param floor.
    Observed cells are sampled uniformly without replacement and
    y = clean + Normal(0, variance at the cell).
    """
    rng = np.random.default_rng(spec.seed)
    D = spec.rank_mean
    mean_factors = [rng.uniform(-1.0, 1.0, (n, D)) / math.sqrt(D)
                    for n in spec.mode_sizes]
    clean = _low_rank_field(mean_factors)

    dev_factors = None
    if spec.noise_kind == "none":
        variance = np.zeros(spec.mode_sizes)
    elif spec.noise_kind == "homoscedastic":
        variance = np.full(spec.mode_sizes, spec.noise_param)
    else:
        Dp = spec.rank_dev
        dev_factors = [rng.uniform(0.0, 1.0, (n, Dp)) / math.sqrt(Dp)
                       for n in spec.mode_sizes]
        variance = _low_rank_field(dev_factors) + spec.noise_param

    total = int(np.prod(spec.mode_sizes))
    n_obs = int(round(spec.observed_fraction * total))
    if n_obs < 1:
        raise ConfigError("observed_fraction selects no cells")
    chosen = np.sort(rng.choice(total, size=n_obs, replace=False))
    idx = np.column_stack(np.unravel_index(chosen, spec.mode_sizes)).astype(np.int64)
    noise = rng.standard_normal(n_obs) * np.sqrt(variance.reshape(-1)[chosen])
    values = clean.reshape(-1)[chosen] + noise
    obs = ObservationSet(spec.mode_sizes, idx, values)
    return SyntheticData(spec, obs, clean, variance, mean_factors, dev_factors)


def write_dense_field(path, field_array):
    """Write every cell of a 2- or 3-mode array as csv rows `i,j[,k],value`."""
    arr = np.asarray(field_array)
    with open(path, "w") as fh:
        for index in np.ndindex(arr.shape):
            fh.write(",".join(str(i) for i in index) + f",{arr[index]:.17g}\n")


# ---------------------------------------------------------------------------
# cold start

def cold_start_default(kind, global_mean=0.0):
    """Prediction for test tuples whose row/column was never trained on:
    the conventional 3.0 for rating data, the global training mean otherwise."""
    if kind == "rating":
        return 3.0
    if kind == "mean":
        return float(global_mean)
    raise ConfigError(f"unknown cold-start kind {kind!r}")
