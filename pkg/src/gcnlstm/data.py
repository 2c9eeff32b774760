"""Series ingestion, min-max scaling, seasonal splits, sliding windows and synthetic data."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")

# meteorological seasons by month: DJF, MAM, JJA, SON
_SEASON_OF_MONTH = np.array([0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 0])


class DataError(ValueError):
    """Malformed input data."""


@dataclass(frozen=True)
class SeriesTable:
    timestamps: np.ndarray  # datetime64[s], strictly increasing at a constant step
    values: np.ndarray  # (T, N)
    sites: tuple[str, ...]

    def __post_init__(self):
        t = len(self.timestamps)
        if self.values.ndim != 2 or self.values.shape != (t, len(self.sites)):
            raise DataError(f"values {self.values.shape} do not match {t} timestamps x {len(self.sites)} sites")

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def step(self) -> np.timedelta64:
        return self.timestamps[1] - self.timestamps[0]

    def with_values(self, values) -> "SeriesTable":
        return SeriesTable(self.timestamps, np.asarray(values, dtype=np.float64), self.sites)


def load_csv(path, timestamp_column: str | None = None) -> SeriesTable:
    """Read ``timestamp,site_1,...,site_N`` rows.

    Row numbers in error messages are 1-based file lines (the header is line 1).
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: header needs a timestamp column and at least one site")
        if timestamp_column is not None and header[0] != timestamp_column:
            raise DataError(f"{path}: first column is {header[0]!r}, expected {timestamp_column!r}")
        stamps, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {line_no} has {len(row)} fields, expected {len(header)}")
            try:
                stamps.append(np.datetime64(row[0].strip(), "s"))
            except ValueError:
                raise DataError(f"{path}: line {line_no} has unparseable timestamp {row[0]!r}") from None
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise DataError(f"{path}: line {line_no} has a non-numeric cell") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}: line {line_no} has a missing or non-finite cell")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    ts = np.array(stamps, dtype="datetime64[s]")
    if len(ts) > 1:
        diffs = np.diff(ts)
        bad = np.flatnonzero(diffs <= np.timedelta64(0, "s"))
        if bad.size:
            raise DataError(f"{path}: line {bad[0] + 3} timestamp is not after the previous row")
        uneven = np.flatnonzero(diffs != diffs[0])
        if uneven.size:
            raise DataError(f"{path}: line {uneven[0] + 3} breaks the constant time step (gap or jitter)")
    return SeriesTable(ts, np.array(rows, dtype=np.float64), tuple(h.strip() for h in header[1:]))


def write_csv(path, table: SeriesTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *table.sites])
        for ts, row in zip(table.timestamps, table.values):
            w.writerow([str(ts), *(repr(float(v)) for v in row)])


@dataclass(frozen=True)
class Scaler:
    """Per-site min-max map fitted on training rows. Constant sites map to 0."""

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, train_values) -> "Scaler":
        x = np.asarray(train_values, dtype=np.float64)
        if x.ndim != 2 or len(x) == 0:
            raise ValueError("scaler needs a non-empty (T, N) training block")
        mins, maxs = x.min(axis=0), x.max(axis=0)
        flat = maxs == mins
        if flat.any():
            warnings.warn(f"constant sites {np.flatnonzero(flat).tolist()} scale to 0", RuntimeWarning, stacklevel=2)
        return cls(mins, maxs)

    @property
    def _span(self):
        span = self.maxs - self.mins
        return np.where(span == 0, 1.0, span)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = (x - self.mins) / self._span
        return np.where(self.maxs == self.mins, 0.0, out)

    def invert(self, x) -> np.ndarray:
        """Inverse map for arrays with sites on the last axis."""
        x = np.asarray(x, dtype=np.float64)
        return x * self._span + self.mins

    def invert_sites(self, x) -> np.ndarray:
        """Inverse for arrays shaped (B, N, k)."""
        return x * self._span[:, None] + self.mins[:, None]


def fit_scaler(table: SeriesTable, tags) -> Scaler:
    tags = np.asarray(tags)
    return Scaler.fit(table.values[tags == "train"])


def seasons(timestamps) -> np.ndarray:
    months = np.asarray(timestamps).astype("datetime64[M]").astype(int) % 12
    return _SEASON_OF_MONTH[months]


def season_blocks(timestamps) -> list[tuple[int, int]]:
    """Half-open row ranges of maximal runs sharing one season (one season-year each)."""
    s = seasons(timestamps)
    if len(s) == 0:
        return []
    cuts = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(s)]])
    return [(int(a), int(b)) for a, b in zip(starts, ends)]


def split_sizes(n: int) -> tuple[int, int, int]:
    """80/10/10: train = floor(0.8 n); the remainder halves, the odd row going to test."""
    n_train = (8 * n) // 10
    n_val = (n - n_train) // 2
    return n_train, n_val, n - n_train - n_val


def seasonal_split(table_or_timestamps) -> np.ndarray:
    """Per-row tags; each season-year block is split chronologically 80/10/10."""
    ts = getattr(table_or_timestamps, "timestamps", table_or_timestamps)
    tags = np.empty(len(ts), dtype="<U5")
    for a, b in season_blocks(ts):
        n_train, n_val, _ = split_sizes(b - a)
        tags[a : a + n_train] = "train"
        tags[a + n_train : a + n_train + n_val] = "val"
        tags[a + n_train + n_val : b] = "test"
    return tags


def contiguous_runs(tags, split: str, blocks=None) -> list[tuple[int, int]]:
    """Half-open row ranges where ``tags == split``, cut at every block boundary in ``blocks``."""
    mask = np.asarray(tags) == split
    if blocks is None:
        blocks = [(0, len(mask))]
    runs = []
    for a, b in blocks:
        start = None
        for i in range(a, b):
            if mask[i] and start is None:
                start = i
            elif not mask[i] and start is not None:
                runs.append((start, i))
                start = None
        if start is not None:
            runs.append((start, b))
    return runs


@dataclass(frozen=True)
class WindowedDataset:
    inputs: np.ndarray  # (S, N, h), oldest lag first
    targets: np.ndarray  # (S, N, k)
    times: np.ndarray  # timestamp of the last input row, per sample
    rows: np.ndarray  # row index of the last input row, per sample
    split: str

    def __len__(self):
        return len(self.inputs)


def make_windows(table: SeriesTable, scaler: Scaler | None, h: int, k: int, split: str, tags) -> WindowedDataset:
    """Stride-1 windows inside each contiguous run of ``split`` rows.

    A run of length L yields L - h - k + 1 samples; shorter runs are skipped with a warning.
    """
    if h < 1 or k < 1:
        raise ValueError("h and k must be >= 1")
    values = scaler.apply(table.values) if scaler is not None else table.values
    xs, ys, rows = [], [], []
    for a, b in contiguous_runs(tags, split, season_blocks(table.timestamps)):
        count = (b - a) - h - k + 1
        if count <= 0:
            warnings.warn(f"{split} block rows {a}..{b - 1} shorter than h+k={h + k}; skipped", RuntimeWarning, stacklevel=2)
            continue
        block = values[a:b]
        win = np.lib.stride_tricks.sliding_window_view(block, h + k, axis=0)  # (count', N, h+k)
        win = win[:count]
        xs.append(win[:, :, :h])
        ys.append(win[:, :, h:])
        rows.append(np.arange(a + h - 1, a + h - 1 + count))
    if not xs:
        raise DataError(f"no {split} windows for h={h}, k={k}")
    rows = np.concatenate(rows)
    return WindowedDataset(
        np.ascontiguousarray(np.concatenate(xs)),
        np.ascontiguousarray(np.concatenate(ys)),
        table.timestamps[rows],
        rows,
        split,
    )


@dataclass(frozen=True)
class Prepared:
    """Everything derived from one table for fixed (h, k): split tags, scaler, windows."""

    table: SeriesTable
    tags: np.ndarray
    scaler: Scaler
    train: WindowedDataset
    val: WindowedDataset | None
    test: WindowedDataset | None


def prepare(table: SeriesTable, h: int, k: int, tags=None) -> Prepared:
    tags = seasonal_split(table) if tags is None else np.asarray(tags)
    scaler = fit_scaler(table, tags)
    out = {}
    for split in SPLITS:
        try:
            out[split] = make_windows(table, scaler, h, k, split, tags)
        except DataError:
            if split == "train":
                raise
            out[split] = None
    return Prepared(table, tags, scaler, out["train"], out["val"], out["test"])


@dataclass(frozen=True)
class SynthConfig:
    """Ring of sites, each an AR(2) process driven partly by its neighbours' past.

    site_i[t] = a1 s_i[t-1] + a2 s_i[t-2] + coupling * mean(s_{i-1}, s_{i+1})[t-lag] + noise
    The result is shifted/scaled to ``level + scale * s``, optionally multiplied by a
    daily profile, and clipped at 0.
    """

    n_sites: int = 8
    n_rows: int = 2000
    coupling: float = 0.65
    noise: float = 0.05
    ar1: float = 0.6
    ar2: float = -0.3
    lag: int = 1
    diurnal: bool = False
    level: float = 5.0
    scale: float = 1.0
    step_minutes: int = 10
    start: str = "2007-01-01T00:00:00"
    burn_in: int = 200

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError("synthetic data needs at least 2 sites")
        if self.n_rows < 3:
            raise ValueError("synthetic data needs at least 3 rows")
        if self.noise < 0 or self.step_minutes < 1 or self.lag < 1 or self.burn_in < 0:
            raise ValueError("noise must be >= 0; step_minutes and lag >= 1; burn_in >= 0")
        if _spectral_radius(self) >= 1.0 - 1e-9:
            raise ValueError("AR/coupling coefficients give a non-stationary process")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


def _spectral_radius(c: SynthConfig) -> float:
    """Largest root modulus of the recursion over all ring Fourier modes."""
    order = max(2, c.lag)
    worst = 0.0
    for j in range(c.n_sites):
        lam = np.cos(2 * np.pi * j / c.n_sites)
        # s[t] = sum_m phi[m] s[t-1-m]
        phi = np.zeros(order)
        phi[0] += c.ar1
        phi[1] += c.ar2
        phi[c.lag - 1] += c.coupling * lam
        companion = np.zeros((order, order))
        companion[0] = phi
        companion[1:, :-1] = np.eye(order - 1)
        worst = max(worst, float(np.abs(np.linalg.eigvals(companion)).max()))
    return worst


def synth_generate(config: SynthConfig, rng) -> SeriesTable:
    c = config
    total = c.n_rows + c.burn_in
    lead = max(2, c.lag)
    s = np.zeros((total + lead, c.n_sites))
    shocks = rng.normal(0.0, 1.0, size=(total, c.n_sites))
    for t in range(lead, total + lead):
        past = s[t - c.lag]
        neighbours = 0.5 * (np.roll(past, 1) + np.roll(past, -1))
        s[t] = c.ar1 * s[t - 1] + c.ar2 * s[t - 2] + c.coupling * neighbours + shocks[t - lead]
    s = s[lead + c.burn_in :]
    s = s / s.std()
    values = c.level + c.scale * s
    start = np.datetime64(c.start, "s")
    stamps = start + np.arange(c.n_rows) * np.timedelta64(c.step_minutes * 60, "s")
    if c.diurnal:
        minutes = (stamps - stamps.astype("datetime64[D]")).astype(int) / 60.0
        values = values * (1.0 + 0.5 * np.sin(2 * np.pi * minutes / 1440.0))[:, None]
    values = values + c.noise * c.scale * rng.normal(0.0, 1.0, size=values.shape)
    values = np.maximum(values, 0.0)
    sites = tuple(f"site_{i:02d}" for i in range(c.n_sites))
    return SeriesTable(stamps, values, sites)
