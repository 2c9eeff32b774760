"""Site graph: absolute Pearson correlation adjacency and its symmetric normalization."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SiteGraph:
    adjacency: np.ndarray
    normalized: np.ndarray
    sites: tuple[str, ...] = ()

    @property
    def n_sites(self) -> int:
        return self.adjacency.shape[0]

    def permuted(self, order) -> "SiteGraph":
        order = np.asarray(order)
        sites = tuple(self.sites[i] for i in order) if self.sites else ()
        return SiteGraph(
            self.adjacency[np.ix_(order, order)], self.normalized[np.ix_(order, order)], sites
        )


def pearson_adjacency(series, min_std: float = 1e-9, diagonal: float = 1.0) -> np.ndarray:
    """|corr| between the columns of a T x N series matrix.

    Columns whose standard deviation is below ``min_std`` get zero off-diagonal
    entries. ``diagonal`` is 1 by default (self-correlation); pass 0 for the
    zero-diagonal convention.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"series must be T x N, got shape {x.shape}")
    t, n = x.shape
    if t < 3 or n < 2:
        raise ValueError(f"need T >= 3 rows and N >= 2 columns, got {x.shape}")
    centered = x - x.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    std = norms / np.sqrt(t)
    flat = std < min_std
    if flat.any():
        warnings.warn(
            f"near-constant columns {np.flatnonzero(flat).tolist()} (std < {min_std}); "
            "their correlations are set to 0",
            RuntimeWarning,
            stacklevel=2,
        )
    safe = np.where(flat, 1.0, norms)
    corr = np.abs((centered.T @ centered) / np.outer(safe, safe))
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    corr = np.clip(0.5 * (corr + corr.T), 0.0, 1.0)
    np.fill_diagonal(corr, diagonal)
    return corr


def normalize(adjacency) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise ValueError("adjacency must be symmetric")
    if (a < 0).any():
        raise ValueError("adjacency must be nonnegative")
    a_hat = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    out = d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]
    return 0.5 * (out + out.T)


def build_graph(
    train_values, sites=(), min_std: float = 1e-9, zero_diagonal: bool = False
) -> SiteGraph:
    """Graph from the training-split series (rows = time, columns = sites)."""
    adj = pearson_adjacency(train_values, min_std=min_std, diagonal=0.0 if zero_diagonal else 1.0)
    return SiteGraph(adj, normalize(adj), tuple(sites))


def graph_from_adjacency(adjacency, sites=()) -> SiteGraph:
    adj = np.asarray(adjacency, dtype=np.float64)
    return SiteGraph(adj, normalize(adj), tuple(sites))


def write_adjacency_csv(path, adjacency, sites) -> None:
    adj = np.asarray(adjacency)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(sites))
        for row in adj:
            w.writerow([repr(float(v)) for v in row])


def read_adjacency_csv(path) -> tuple[np.ndarray, tuple[str, ...]]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty adjacency file")
    sites = tuple(rows[0])
    body = rows[1:]
    if len(body) != len(sites) or any(len(r) != len(sites) for r in body):
        raise ValueError(f"{path}: adjacency must be {len(sites)} x {len(sites)} under the header")
    try:
        adj = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric adjacency entry ({exc})") from None
    return adj, sites
