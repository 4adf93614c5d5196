"""Epoch-level weighted coin-flipping game engine.

This plays the blackboard coin game directly — column sums, clamping, bounded
view disagreement, weight updates — without message-level simulation, so
statistical experiments (gap-lemma compliance, weight dynamics, endgame
agreement rates) run at desk scale.  The message-level stack exercises the
same operations at small scale; this engine exercises their statistics.

Adversary powers modeled per the asynchronous game: the direction sigma(t) is
committed before the round's coins are flipped; the scheduler may leave up to
f columns partial (at least n-f must fill); corrupted writers choose their
column values after seeing all good flips; and each viewer's column sums may
miss the final write of the (at most f) unforced columns, both at coin time
and in the frozen views used for end-of-epoch statistics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adversary import counteract_bad_values
from .agreement import epoch_advance
from .params import ProtocolParams, clamp_coin_sum, sgn


def achievable_column_sum(target: float, m: int, sigma: int):
    """Round a real target to a full-column sum: an integer of parity m within
    [-m, m].  Pushes in the sigma direction never undershoot (ceil); padding
    targets keep their sign.  Returns (raw, last_flip)."""
    if sigma * target > 0:
        raw = int(np.ceil(abs(target)))
        if (raw - m) % 2:
            raw += 1
        raw = min(raw, m) * sigma
    else:
        raw = int(round(target))
        if (raw - m) % 2:
            raw += 1 if raw <= 0 else -1
        raw = max(-m, min(m, raw))
    last = 1 if raw >= 0 else -1
    return raw, last


class GameOpponent:
    """Game-level adversary: no corruption, fair play."""

    name = "honest-random"
    forcing = False

    def __init__(self, **opts):
        self.opts = opts

    def pick_bad(self, n, f, rng):
        return frozenset()

    def direction(self, t, rng) -> int:
        return int(rng.integers(0, 2)) * 2 - 1

    def plan_lengths(self, t, weights, good, bad, m, rng):
        """Column lengths for this iteration: {pid: length}; omitted = full."""
        return {}

    def bad_columns(self, t, sigma, weights, good_weighted_sum, hide_gain, bad, m, x_max, rng):
        """Raw sums and last flips for corrupted columns: {pid: (raw, last)}."""
        return {}


class HonestGame(GameOpponent):
    name = "honest-random"


class CrashGame(GameOpponent):
    """f processes are corrupted at the start and never write anything."""

    name = "crash-stop"
    forcing = False

    def pick_bad(self, n, f, rng):
        return frozenset(int(i) for i in rng.choice(n, size=f, replace=False))

    def bad_columns(self, t, sigma, weights, good_weighted_sum, hide_gain, bad, m, x_max, rng):
        return {i: (0, 0) for i in bad}

    def plan_lengths(self, t, weights, good, bad, m, rng):
        return {i: 0 for i in bad}


class CounteractGame(GameOpponent):
    """Corrupts f immediately; starves the f heaviest good columns (leaving a
    few stray flips to hide later) and offsets the observed good sum so some
    good view still shows sigma."""

    name = "counteract"
    forcing = True

    def pick_bad(self, n, f, rng):
        return frozenset(int(i) for i in rng.choice(n, size=f, replace=False))

    def plan_lengths(self, t, weights, good, bad, m, rng):
        heaviest = sorted(good, key=lambda i: (-weights[i], i))[: len(bad)]
        return {i: int(rng.integers(1, max(2, m))) for i in heaviest}

    def bad_columns(self, t, sigma, weights, good_weighted_sum, hide_gain, bad, m, x_max, rng):
        order = sorted(bad)
        targets = counteract_bad_values(
            sigma, good_weighted_sum, [weights[i] for i in order], x_max, m, slack=hide_gain
        )
        return {i: achievable_column_sum(tgt, m, sigma) for i, tgt in zip(order, targets)}


class ColludingGame(GameOpponent):
    """Corrupted players copy one leader's honest-looking flips exactly."""

    name = "colluding"
    forcing = False

    def pick_bad(self, n, f, rng):
        return frozenset(int(i) for i in rng.choice(n, size=f, replace=False))

    def bad_columns(self, t, sigma, weights, good_weighted_sum, hide_gain, bad, m, x_max, rng):
        flips = rng.integers(0, 2, size=m) * 2 - 1
        raw = int(flips.sum())
        last = int(flips[-1])
        return {i: (raw, last) for i in bad}


GAME_OPPONENTS = {
    cls.name: cls for cls in (HonestGame, CrashGame, CounteractGame, ColludingGame)
}


@dataclass
class GameConfig:
    params: ProtocolParams
    adversary: str = "honest-random"
    adversary_args: dict = field(default_factory=dict)
    epochs: int = 1
    seed: int = 0
    stop_on_natural_end: bool = True
    zero_bad_weights: bool = False
    record_series: bool = True


@dataclass
class EpochReport:
    epoch: int
    weights_in: list
    weights_out: list
    bad: frozenset
    iters_played: int
    natural_end_at: int | None
    unanimous_iters: int
    dev: np.ndarray
    corr: np.ndarray
    sg_series: list
    sb_series: list
    sigma_series: list
    inv_lhs: float = 0.0
    inv_rhs: float = 0.0
    inv_ok: bool = True


@dataclass
class GameReport:
    seed: int
    bad: frozenset
    epochs: list
    ended_at: tuple | None  # (epoch, iteration) of the natural end, if any

    @property
    def agreement_reached(self) -> bool:
        return self.ended_at is not None


def _invariant_check(weights, bad, params):
    good_loss = sum(1.0 - w for i, w in enumerate(weights) if i not in bad)
    bad_loss = sum(1.0 - w for i, w in enumerate(weights) if i in bad)
    rhs = bad_loss + params.eps**2 * params.f / 8.0
    return good_loss, rhs, good_loss <= rhs + 1e-12


def run_game(cfg: GameConfig) -> GameReport:
    p = cfg.params
    if p.f > 0:
        p.require_quarter_resilience()
    opp_cls = GAME_OPPONENTS.get(cfg.adversary)
    if opp_cls is None:
        raise KeyError(f"unknown game adversary {cfg.adversary!r}; have {sorted(GAME_OPPONENTS)}")
    opp = opp_cls(**cfg.adversary_args)

    proc_rng = [np.random.default_rng(np.random.SeedSequence((cfg.seed, 7, i))) for i in range(p.n)]
    adv_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xAD)))
    view_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x51DE)))

    bad = opp.pick_bad(p.n, p.f, adv_rng)
    good = [i for i in range(p.n) if i not in bad]
    weights = [1.0] * p.n
    if cfg.zero_bad_weights:
        for i in bad:
            weights[i] = 0.0

    reports = []
    ended = None
    for k in range(1, cfg.epochs + 1):
        rep = _play_epoch(cfg, p, opp, k, weights, bad, good, proc_rng, adv_rng, view_rng)
        reports.append(rep)
        if rep.natural_end_at is not None and cfg.stop_on_natural_end:
            ended = (k, rep.natural_end_at)
            break
        if k % (p.k_max + 1) == 0:
            # undecided after the endgame epoch: restart with unit weights
            weights = [1.0] * p.n
            if cfg.zero_bad_weights:
                for i in bad:
                    weights[i] = 0.0
        else:
            weights = rep.weights_out
    return GameReport(cfg.seed, bad, reports, ended)


def _play_epoch(cfg, p, opp, k, weights_in, bad, good, proc_rng, adv_rng, view_rng):
    n, m, T = p.n, p.m, p.T
    w = np.asarray(weights_in, dtype=float)
    dev = np.zeros(n)
    corr = np.zeros((n, n))
    sg_series = []
    sb_series = []
    sigma_series = []
    natural_end_at = None
    unanimous = 0
    iters = 0
    last_raw = np.zeros(n, dtype=np.int64)
    last_lam = np.zeros(n, dtype=np.int64)
    hidden_pool = []

    for t in range(1, T + 1):
        iters = t
        sigma = opp.direction(t, adv_rng)
        lengths = {i: m for i in range(n)}
        lengths.update(opp.plan_lengths(t, w, good, sorted(bad), m, adv_rng))
        raw = np.zeros(n, dtype=np.int64)
        lam = np.zeros(n, dtype=np.int64)
        for i in good:
            length = lengths.get(i, m)
            if length > 0:
                flips = proc_rng[i].integers(0, 2, size=length) * 2 - 1
                raw[i] = flips.sum()
                lam[i] = flips[-1]
        x = np.array([clamp_coin_sum(float(v), p.x_max) for v in raw])
        sg = float((w * x)[good].sum())
        # hideable frontier: good partial columns (the scheduler leaves their
        # last write unforced); at most f columns total
        hideable = [i for i in good if 0 < lengths.get(i, m) < m][: p.f]
        deltas = {}
        for i in hideable:
            x_alt = clamp_coin_sum(float(raw[i] - lam[i]), p.x_max)
            deltas[i] = w[i] * (x_alt - x[i])
        gain = sum(d for d in deltas.values() if sigma * d > 0) * sigma

        bad_cols = opp.bad_columns(t, sigma, w, sg, gain, bad, m, p.x_max, adv_rng)
        for i, (braw, blast) in bad_cols.items():
            raw[i] = braw
            lam[i] = blast
            x[i] = clamp_coin_sum(float(braw), p.x_max)
        sb = float(sum(w[i] * x[i] for i in bad))
        total = float((w * x).sum())

        dev += (w * x) ** 2
        wx = w * x
        corr += np.outer(wx, wx)
        if cfg.record_series:
            sg_series.append(sg)
            sb_series.append(sb)
            sigma_series.append(sigma)
        last_raw = raw.copy()
        last_lam = lam.copy()
        hidden_pool = hideable

        smax = total + sum(d for d in deltas.values() if d > 0)
        smin = total + sum(d for d in deltas.values() if d < 0)
        if sgn(smax) == sgn(smin):
            unanimous += 1
        if opp.forcing and natural_end_at is None:
            if sigma * total + abs(gain) < 0:
                natural_end_at = t
                if cfg.stop_on_natural_end:
                    break

    np.fill_diagonal(corr, 0.0)

    # end-of-epoch frozen views: each viewer may miss the final write of the
    # unforced columns; corrupted viewers choose self-servingly
    final_wx = w * np.array([clamp_coin_sum(float(v), p.x_max) for v in last_raw])
    locals_ = {}
    for pid in range(n):
        if pid in bad and opp.name == "crash-stop":
            continue  # crashed processes never disclose a view
        if pid in bad:
            candidates = [frozenset()]
            if last_lam[pid]:
                candidates.append(frozenset({pid}))
        else:
            chosen = [i for i in hidden_pool if view_rng.integers(0, 2)]
            candidates = [frozenset(chosen[: p.f])]
        best = None
        for hidden in candidates:
            dv, cv = _adjusted_stats(dev, corr, final_wx, last_raw, last_lam, w, hidden, p)
            new_w, _, _ = epoch_advance(list(w), dv, cv, p)
            if best is None or new_w[pid] > best[0][pid]:
                best = (new_w, hidden)
        locals_[pid] = best[0]

    cons = list(w)
    for i in range(n):
        if i in locals_:
            wi = locals_[i][i]
            cons[i] = wi if wi > p.w_min else 0.0

    lhs, rhs, ok = _invariant_check(cons, bad, p)
    return EpochReport(
        epoch=k,
        weights_in=list(weights_in),
        weights_out=cons,
        bad=bad,
        iters_played=iters,
        natural_end_at=natural_end_at,
        unanimous_iters=unanimous,
        dev=dev,
        corr=corr,
        sg_series=sg_series,
        sb_series=sb_series,
        sigma_series=sigma_series,
        inv_lhs=lhs,
        inv_rhs=rhs,
        inv_ok=ok,
    )


def _adjusted_stats(dev, corr, final_wx, last_raw, last_lam, w, hidden, p):
    """Viewer statistics: true accumulations with the final iteration's row
    re-read through the viewer's (possibly lagging) view.  Entries not
    involving a hidden column are untouched (bit-exact)."""
    dv = dev.copy()
    cv = corr.copy()
    if not hidden:
        return dv, cv
    n = len(final_wx)
    adj_wx = final_wx.copy()
    for i in hidden:
        x_alt = clamp_coin_sum(float(last_raw[i] - last_lam[i]), p.x_max)
        adj_wx[i] = w[i] * x_alt
        dv[i] += adj_wx[i] ** 2 - final_wx[i] ** 2
    pairs = {(min(i, j), max(i, j)) for i in hidden for j in range(n) if j != i}
    for i, j in pairs:
        delta = adj_wx[i] * adj_wx[j] - final_wx[i] * final_wx[j]
        cv[i, j] += delta
        cv[j, i] += delta
    return dv, cv
