"""Coin-sum extraction, deviation/correlation statistics, and the simplified-game detector.

All statistics are pure functions over frozen views or plain arrays, so they
can be evaluated concurrently across epochs and runs.  Accumulation uses
compensated summation (math.fsum) to keep the cross-view disagreement
analysis, not numeric error, the dominant discrepancy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import ProtocolParams, clamp_coin_sum, sgn


def thresholds(params: ProtocolParams):
    """Deviation and correlation budgets (alpha_T, beta_T) for one epoch."""
    return params.alpha_T, params.beta_T


def column_sum(view, t: int, i: int, params: ProtocolParams) -> float:
    """Clamped sum of the non-blank entries in column i of blackboard t of a frozen view."""
    return clamp_coin_sum(float(sum(view.column_values(t, i))), params.x_max)


@dataclass
class EpochStats:
    """Weighted second-moment and pairwise-product statistics for one epoch."""

    epoch: int
    dev: list
    corr: dict  # (i, j), i < j -> value
    alpha: float
    beta: float

    def corr_at(self, i, j):
        if i == j:
            raise ValueError("corr is defined for distinct pairs")
        return self.corr.get((i, j) if i < j else (j, i), 0.0)


def compute_stats(xs, weights, params: ProtocolParams, epoch: int = 1) -> EpochStats:
    """dev(i) = sum_t (w_i X_i(t))^2 and corr(i,j) = sum_t w_i w_j X_i(t) X_j(t).

    ``xs`` is a T-by-n array-like of already-clamped column sums as seen by
    one viewer.  Weights are fixed for the whole epoch.
    """
    arr = np.asarray(xs, dtype=float)
    if arr.ndim != 2:
        raise ValueError("expected a T x n array of column sums")
    n = arr.shape[1]
    w = np.asarray(weights, dtype=float)
    dev = [math.fsum((w[i] * arr[:, i]) ** 2) for i in range(n)]
    corr = {}
    for i in range(n):
        for j in range(i + 1, n):
            val = math.fsum(w[i] * w[j] * arr[:, i] * arr[:, j])
            corr[(i, j)] = val
    return EpochStats(epoch, dev, corr, params.alpha_T, params.beta_T)


@dataclass(frozen=True)
class SimpleGameConfig:
    """Unweighted coin-flipping game: f = floor(n / (3 + eps)) bad players."""

    n: int
    T: int
    eps: float = 1.0

    def __post_init__(self):
        if self.n < 2 or self.T < 1:
            raise ValueError("need n >= 2 and T >= 1")
        if self.f * 3 >= self.n:
            raise ValueError("simplified game requires f < n/3")

    @property
    def f(self) -> int:
        return math.floor(self.n / (3 + self.eps) + 1e-9)


@dataclass
class SimpleGameResult:
    values: np.ndarray  # rounds_played x n, entries in {-1, +1}
    directions: np.ndarray
    bad: frozenset
    stopped_at: int | None  # first round (1-based) the outcome defied sigma, if any
    rounds_played: int

    @property
    def survived(self) -> bool:
        return self.stopped_at is None


def run_simplified_game(
    cfg: SimpleGameConfig, adversary, seed: int, *, stop_on_loss: bool = True
) -> SimpleGameResult:
    """Play up to T rounds: good players flip fair coins, the adversary sees them
    and fills in the bad players' values, and the game continues while the
    outcome sgn(sum) matches the adversary's direction.

    With ``stop_on_loss=False`` all T rounds are recorded regardless and
    ``stopped_at`` reports where the game would have ended; detection tests
    condition on a full record.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC01F)))
    adv_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xADF)))
    n, f, T = cfg.n, cfg.f, cfg.T
    bad = adversary.pick_bad(n, f, adv_rng)
    good = [i for i in range(n) if i not in bad]
    good_flips = rng.integers(0, 2, size=(T, len(good))) * 2 - 1

    values = np.zeros((T, n), dtype=np.int64)
    directions = np.zeros(T, dtype=np.int64)
    stopped_at = None
    played = 0
    for t in range(T):
        sigma = adversary.direction(t, adv_rng)
        row = np.zeros(n, dtype=np.int64)
        row[good] = good_flips[t]
        bad_vals = adversary.bad_values(t, sigma, row, bad, adv_rng)
        for i, v in bad_vals.items():
            row[i] = v
        values[t] = row
        directions[t] = sigma
        played = t + 1
        if sgn(int(row.sum())) != sigma and stopped_at is None:
            stopped_at = t + 1
            if stop_on_loss:
                break
    return SimpleGameResult(values[:played], directions[:played], bad, stopped_at, played)


def detect_pair(values) -> tuple[int, int]:
    """The unordered pair (i, j), i != j, maximizing <X_i, X_j>, ties broken
    by smallest (i, j) lexicographically."""
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError("need a rounds x n matrix with n >= 2")
    gram = arr.T @ arr
    n = gram.shape[0]
    best = None
    best_val = None
    for i in range(n):
        for j in range(i + 1, n):
            v = gram[i, j]
            if best_val is None or v > best_val:
                best_val = v
                best = (i, j)
    return best


def export_epoch_stats(records) -> str:
    """Columnar text export: one block per epoch with dev, upper-triangle corr,
    and the thresholds in force."""
    lines = []
    for st in records:
        lines.append(f"epoch {st.epoch} alpha {st.alpha!r} beta {st.beta!r}")
        lines.append("dev " + " ".join(repr(float(d)) for d in st.dev))
        tri = []
        n = len(st.dev)
        for i in range(n):
            for j in range(i + 1, n):
                tri.append(repr(float(st.corr_at(i, j))))
        lines.append("corr " + " ".join(tri))
    return "\n".join(lines) + "\n"
