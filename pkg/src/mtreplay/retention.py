"""Power-law retention math for the MTR cascade, plus empirical verification.

The closed forms give the expected age of an experience reaching the end of
the k-th sub-buffer, the probability of surviving beyond a given age, and
the expected number of pushes needed to fill the cascade. The empirical
side drives a real `MtrBuffer` with synthetic experiences and records how
long each one lasted inside the cascade.

Lifetimes are counted in pushes (one push per time step) and end when an
experience leaves the cascade, whether it is discarded outright or parked
in the overflow queue: the closed forms describe the cascade, and overflow
residence during the filling phase would otherwise dominate every anchor.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mtreplay.replay import Experience, MtrBuffer


@dataclass(frozen=True, slots=True)
class RetentionParams:
    """Cascade geometry: total capacity, sub-buffer count, promotion chance."""

    capacity: int
    n_sub: int
    beta: float

    def __post_init__(self) -> None:
        if self.capacity <= 0 or self.n_sub <= 0:
            raise ValueError("capacity and n_sub must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    @property
    def sub_capacity(self) -> float:
        return self.capacity / self.n_sub


@dataclass(slots=True)
class SurvivalSample:
    """Lifetime record for one experience; evict_step None = still present."""

    insert_step: int
    evict_step: int | None


def t_hat(params: RetentionParams, k: int) -> float:
    """Expected age of an experience reaching the end of sub-buffer k.

    Equals sum_{i=1..k} (N/n_b) * beta^-(i-1); beta = 1 degenerates to
    k*N/n_b and beta = 0 leaves everything beyond the first buffer
    unreachable (inf).
    """
    if not 1 <= k <= params.n_sub:
        raise ValueError(f"k must lie in [1, {params.n_sub}], got {k}")
    unit = params.sub_capacity
    if params.beta == 1.0:
        return k * unit
    if params.beta == 0.0:
        return unit if k == 1 else math.inf
    b = params.beta
    return unit * (b / (1.0 - b)) * (b ** (-k) - 1.0)


def survival_probability(params: RetentionParams, t: float) -> float:
    """Probability of an experience lasting more than t pushes in the cascade."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if params.beta == 1.0:
        return 1.0
    if params.beta == 0.0:
        return 1.0 if t == 0 else 0.0
    rate = (params.n_sub / params.capacity) * (1.0 - params.beta) / params.beta
    return 1.0 / (t * rate + 1.0)


def expected_fill_count(params: RetentionParams) -> float:
    """Expected pushes until the cascade is full and overflow reaches zero.

    Returns inf for beta = 0, where sub-buffers beyond the first can never
    receive an experience.
    """
    if params.beta == 0.0:
        return math.inf
    if params.beta == 1.0:
        return float(params.capacity)
    return math.fsum(params.sub_capacity * params.beta ** -(i - 1)
                     for i in range(1, params.n_sub + 1))


# ---------------------------------------------------------------------------
# empirical machinery
# ---------------------------------------------------------------------------

_ZERO = np.zeros(1)


def _synthetic_experience(step: int) -> Experience:
    return Experience(_ZERO, _ZERO, 0.0, _ZERO, False, step)


def drive_buffer(params: RetentionParams, push_count: int,
                 rng: np.random.Generator) -> MtrBuffer:
    """Push `push_count` synthetic experiences into a fresh MtrBuffer."""
    buffer = MtrBuffer(params.capacity, params.n_sub, params.beta, rng)
    for step in range(push_count):
        buffer.push(_synthetic_experience(step))
    return buffer


def collect_lifetimes(params: RetentionParams, push_count: int,
                      rng: np.random.Generator) -> list[SurvivalSample]:
    """Drive a fresh MtrBuffer and record every cascade lifetime."""
    samples: list[SurvivalSample] = []
    record = samples.append

    def on_exit(exp: Experience, step: int) -> None:
        record(SurvivalSample(exp.insert_step, step))

    buffer = MtrBuffer(params.capacity, params.n_sub, params.beta, rng,
                       on_cascade_exit=on_exit)
    for step in range(push_count):
        buffer.push(_synthetic_experience(step))
    for sub in buffer.sub_buffers:
        for exp in sub:
            record(SurvivalSample(exp.insert_step, None))
    return samples


def survival_fractions(samples: list[SurvivalSample], push_count: int,
                       anchors: list[float]) -> list[float]:
    """Fraction of experiences whose cascade lifetime exceeded each anchor.

    For an anchor `a` only insertions whose observation window is longer
    than `a` are counted, so experiences still present at the end are never
    misread as short-lived.
    """
    inserts = np.array([s.insert_step for s in samples], dtype=np.int64)
    evicts = np.array([push_count if s.evict_step is None else s.evict_step
                       for s in samples], dtype=np.int64)
    # still-present items carry their observed lifetime, a lower bound that
    # already exceeds any anchor the item is eligible for
    lifetime = evicts - inserts
    out: list[float] = []
    for a in anchors:
        eligible = inserts + a < push_count
        n = int(eligible.sum())
        out.append(float((lifetime[eligible] > a).mean()) if n else math.nan)
    return out


def empirical_survival(push_count: int, params: RetentionParams,
                       rng: np.random.Generator,
                       anchor_times: list[float]) -> list[float]:
    """Empirical survival at each anchor from one simulated push stream."""
    if push_count <= 0:
        raise ValueError("push_count must be positive")
    if anchor_times and max(anchor_times) >= push_count:
        raise ValueError("anchors must be smaller than push_count")
    samples = collect_lifetimes(params, push_count, rng)
    return survival_fractions(samples, push_count, anchor_times)


def empirical_fill_count(params: RetentionParams, rng: np.random.Generator,
                         max_pushes: int | None = None) -> int:
    """Pushes needed until the cascade holds `capacity` experiences."""
    expected = expected_fill_count(params)
    if not math.isfinite(expected):
        raise ValueError("cascade never fills for beta = 0")
    limit = max_pushes if max_pushes is not None else int(50 * expected) + 1000
    buffer = MtrBuffer(params.capacity, params.n_sub, params.beta, rng)
    for step in range(limit):
        buffer.push(_synthetic_experience(step))
        if buffer.cascade_len == params.capacity:
            return step + 1
    raise RuntimeError(f"cascade did not fill within {limit} pushes")


@dataclass(slots=True)
class SurvivalRow:
    anchor_t: float
    analytic: float
    empirical_mean: float
    empirical_se: float
    n_seeds: int


def survival_study(params: RetentionParams, push_count: int, seeds: list[int],
                   anchors: list[float]) -> list[SurvivalRow]:
    """Multi-seed empirical survival vs the closed form at each anchor."""
    per_seed = np.array([
        empirical_survival(push_count, params, np.random.default_rng(seed), anchors)
        for seed in seeds
    ])
    mean = per_seed.mean(axis=0)
    se = (per_seed.std(axis=0, ddof=1) / math.sqrt(len(seeds))
          if len(seeds) > 1 else np.zeros(len(anchors)))
    return [SurvivalRow(a, survival_probability(params, a), float(m), float(s),
                        len(seeds))
            for a, m, s in zip(anchors, mean, se)]


def loglog_tail_slope(anchors: list[float], survival: list[float],
                      t_min: float) -> float:
    """Least-squares slope of log survival vs log age for anchors > t_min."""
    pts = [(a, s) for a, s in zip(anchors, survival) if a > t_min and s > 0]
    if len(pts) < 2:
        raise ValueError("need at least two anchors beyond t_min")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    x = x - x.mean()
    return float((x * (y - y.mean())).sum() / (x * x).sum())


def cascade_ages(buffer: MtrBuffer, now_step: int) -> np.ndarray:
    """Ages of every experience currently stored in the cascade."""
    ages = [now_step - exp.insert_step
            for sub in buffer.sub_buffers for exp in sub]
    return np.asarray(ages, dtype=np.int64)


def age_histogram(ages: np.ndarray, bins: int = 100
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform-bin histogram over the observed age range."""
    if ages.size == 0:
        edges = np.linspace(0.0, 1.0, bins + 1)
        return edges[:-1], edges[1:], np.zeros(bins, dtype=np.int64)
    counts, edges = np.histogram(ages, bins=bins)
    return edges[:-1], edges[1:], counts


# ---------------------------------------------------------------------------
# reservoir uniformity Monte Carlo
# ---------------------------------------------------------------------------


def reservoir_inclusion_frequencies(capacity: int, pushes: int, trials: int,
                                    rng: np.random.Generator) -> np.ndarray:
    """Per-item inclusion frequency after `pushes` Algorithm-R insertions.

    Vectorized slot simulation of Algorithm R, drawing the same replacement
    index j ~ Uniform[0, t) per step as `ReservoirBuffer.push`; a trial count
    in the tens of thousands finishes in seconds, which a per-object loop
    over the buffer cannot. The equivalence with `ReservoirBuffer` is pinned
    by a statistical test at small scale.
    """
    if pushes < capacity:
        raise ValueError("pushes must be at least capacity")
    counts = np.zeros(pushes, dtype=np.int64)
    highs = np.arange(capacity + 1, pushes + 1)
    item_ids = np.arange(capacity, pushes)
    base = np.arange(capacity)
    for _ in range(trials):
        js = rng.integers(0, highs)
        mask = js < capacity
        slots = js[mask][::-1]
        ids = item_ids[mask][::-1]
        uniq, first = np.unique(slots, return_index=True)
        contents = base.copy()
        contents[uniq] = ids[first]
        counts[contents] += 1
    return counts / trials


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def write_survival_csv(path: str | Path, rows: list[SurvivalRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["anchor_t", "analytic", "empirical_mean",
                         "empirical_se", "n_seeds"])
        for r in rows:
            writer.writerow([r.anchor_t, r.analytic, r.empirical_mean,
                             r.empirical_se, r.n_seeds])


def write_age_hist_csv(path: str | Path, lo: np.ndarray, hi: np.ndarray,
                       counts: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age_bin_lo", "age_bin_hi", "count"])
        for a, b, c in zip(lo, hi, counts):
            writer.writerow([float(a), float(b), int(c)])
