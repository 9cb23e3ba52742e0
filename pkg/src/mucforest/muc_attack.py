"""Core-guided adversarial sample generation, plus the unguided baseline.

The guided mode grows a per-feature search radius only on features named by
the unsat core of the current box query until the box reaches the other
class (the adversarial region), seeds a search direction from random points
inside it, and then runs randomized gradient-free optimization of the
direction-wise boundary distance. The baseline seeds directions from dataset
rows of other classes instead and shares the optimizer verbatim, which keeps
paired comparisons honest.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import DirectionError, NoCandidateError, NoRegionError
from .forest_model import Dataset, FeatureStats, Forest, predict, predict_batch
from .muc_core import AssumptionSet, extract_muc
from .reach_solver import Box, Target, decide_reachable

_MAX_RESAMPLES = 10
_CANDIDATE_ROUNDS = 4


@dataclass(frozen=True, eq=False)
class AttackConfig:
    """Knobs for region expansion and direction optimization.

    kappa: per-feature expansion step, in feature units.
    bounds: clamp box for expansion and for every evaluated point.
    mu: per-feature perturbation scale, so one Gaussian draw moves every
        component by a comparable fraction of its range.
    epsilon: boundary-search stopping tolerance; None derives it per sample
        as max(1e-4 * ||x||, 1e-6).
    eta0: optimizer step size; iteration t uses eta0 / sqrt(t + 1).
    """

    kappa: np.ndarray
    bounds: Box
    mu: np.ndarray
    immutable: frozenset[int] = frozenset()
    n_candidates: int = 1000
    alpha: float = 0.05
    epsilon: float | None = None
    beta: float = 0.005
    eta0: float = 0.2
    T: int = 200
    seed: int = 0
    max_expand_iters: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "kappa", np.asarray(self.kappa, dtype=np.float64))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        mutable = np.ones(self.kappa.shape[0], dtype=bool)
        mutable[list(self.immutable)] = False
        if (self.kappa[mutable] <= 0).any():
            raise ValueError("kappa must be positive on mutable features")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if (self.mu <= 0).any():
            raise ValueError("mu must be positive")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")

    @classmethod
    def from_stats(cls, stats: FeatureStats, **overrides) -> "AttackConfig":
        """Data-derived defaults: kappa = 5% of each feature's range, mu =
        the range itself (1 where degenerate), bounds = data min/max."""
        ranges = stats.ranges
        defaults = dict(
            kappa=np.where(ranges > 0, 0.05 * ranges, 0.05),
            bounds=Box.closed(stats.mins, stats.maxs),
            mu=np.where(ranges > 0, ranges, 1.0),
        )
        defaults.update(overrides)
        return cls(**defaults)

    def sample_epsilon(self, x: np.ndarray) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return max(1e-4 * float(np.linalg.norm(x)), 1e-6)


@dataclass(eq=False)
class AttackResult:
    x_org: np.ndarray
    x_adv: np.ndarray
    distance: float
    theta_final: np.ndarray
    trace: list[float]
    mode: str
    iterations: int
    tau: np.ndarray | None = None
    floor: np.ndarray | None = None
    ceil: np.ndarray | None = None
    search_time_ms: int = 0
    opt_time_ms: int = 0

    def to_record(self, sample: int) -> dict:
        return {
            "sample": sample,
            "mode": self.mode,
            "x_org": [float(v) for v in self.x_org],
            "x_adv": [float(v) for v in self.x_adv],
            "distance": self.distance,
            "search_time_ms": self.search_time_ms,
            "opt_time_ms": self.opt_time_ms,
            "tau": [float(v) for v in self.tau] if self.tau is not None else None,
            "iterations": self.iterations,
        }


def is_adversarial(forest: Forest, x, y: int) -> bool:
    return predict(forest, x)[0] != y


def region_bounds(x: np.ndarray, tau: np.ndarray, bounds: Box):
    """Clamped (floor, ceil) of the radius-tau box around x."""
    floor = np.clip(x - tau, bounds.lower, bounds.upper)
    ceil = np.clip(x + tau, bounds.lower, bounds.upper)
    return floor, ceil


def expand_adversarial_region(
    forest: Forest, x, y: int, cfg: AttackConfig
) -> np.ndarray:
    """Grow per-feature radii until the box around x reaches another class.

    tau starts at zero. While no point of the clamped box [x - tau, x + tau]
    is classified differently from y, the unsat core of that query is
    extracted (features outside the tentative set are freed to cfg.bounds)
    and every mutable core feature's radius grows by kappa. Returns the first
    tau whose box is satisfiable. Raises NoRegionError when the core consists
    of immutable features only, or when every mutable core feature is already
    saturated at the bounds.
    """
    x = np.asarray(x, dtype=np.float64)
    d = forest.n_features
    tau = np.zeros(d)
    target = Target.not_class(y)
    for _ in range(cfg.max_expand_iters):
        floor, ceil = region_bounds(x, tau, cfg.bounds)
        if decide_reachable(forest, Box.closed(floor, ceil), target):
            return tau

        def is_unsat(subset: frozenset[int]) -> bool:
            lower = cfg.bounds.lower.copy()
            upper = cfg.bounds.upper.copy()
            lo_open = cfg.bounds.lower_open.copy()
            up_open = cfg.bounds.upper_open.copy()
            idx = list(subset)
            lower[idx] = floor[idx]
            upper[idx] = ceil[idx]
            lo_open[idx] = False
            up_open[idx] = False
            return not decide_reachable(forest, Box(lower, upper, lo_open, up_open), target)

        core = extract_muc(AssumptionSet(ids=tuple(range(d)), is_unsat=is_unsat))
        if not core:
            raise NoRegionError("no adversarial point exists anywhere within bounds")
        mutable_core = sorted(core - cfg.immutable)
        if not mutable_core:
            raise NoRegionError(
                "core contains only immutable features; no region reachable"
            )
        growable = [
            f
            for f in mutable_core
            if floor[f] > cfg.bounds.lower[f] or ceil[f] < cfg.bounds.upper[f]
        ]
        if not growable:
            raise NoRegionError("every mutable core feature is saturated at bounds")
        for f in mutable_core:
            tau[f] += cfg.kappa[f]
    raise NoRegionError(f"no adversarial region within {cfg.max_expand_iters} expansions")


def fine_grained_binary_search(
    forest: Forest, x_org, y: int, theta, v0: float, cfg: AttackConfig
) -> float:
    """Distance along direction theta at which the class flips.

    Stage one shrinks the inner probe geometrically while it stays
    adversarial; stage two bisects the resulting bracket down to the stopping
    tolerance and returns the adversarial side. Every probed point is clamped
    to cfg.bounds. Raises DirectionError when the starting point
    x_org + v0 * theta/||theta|| is not adversarial.
    """
    x_org = np.asarray(x_org, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    norm = float(np.linalg.norm(theta))
    if norm == 0.0:
        raise DirectionError("zero direction")
    that = theta / norm
    lo, hi = cfg.bounds.lower, cfg.bounds.upper

    def adversarial(v: float) -> bool:
        point = np.clip(x_org + v * that, lo, hi)
        return predict(forest, point)[0] != y

    if not adversarial(v0):
        raise DirectionError("starting point along direction is not adversarial")
    eps = cfg.sample_epsilon(x_org)
    v_out, v_in = v0, v0 * (1.0 - cfg.alpha)
    while adversarial(v_in):
        v_out = v_in
        v_in = v_out * (1.0 - cfg.alpha)
    while v_out - v_in > eps:
        v_mid = 0.5 * (v_out + v_in)
        if adversarial(v_mid):
            v_out = v_mid
        else:
            v_in = v_mid
    return v_out


def select_initial_direction(
    forest: Forest,
    x,
    y: int,
    floor: np.ndarray,
    ceil: np.ndarray,
    cfg: AttackConfig,
    rng: np.random.Generator,
    pool: np.ndarray | None = None,
    fallback: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Direction with the smallest boundary distance among candidates.

    With ``pool`` given (baseline mode), the candidates are exactly those
    rows. Otherwise candidates are sampled uniformly from [floor, ceil];
    empty draws retry with doubled sample counts a few times, then fall back
    to the ``fallback`` point (the region's known adversarial witness) when
    one is given, and raise NoCandidateError otherwise. Features with
    floor == ceil never move, so components outside the expanded region keep
    their original values.
    """
    x = np.asarray(x, dtype=np.float64)
    best_theta: np.ndarray | None = None
    best_lambda = np.inf

    def consider(cands: np.ndarray):
        nonlocal best_theta, best_lambda
        if cands.size == 0:
            return
        classes, _ = predict_batch(forest, cands)
        for cand in cands[classes != y]:
            theta = cand - x
            norm = float(np.linalg.norm(theta))
            if norm == 0.0:
                continue
            lam = fine_grained_binary_search(forest, x, y, theta, norm, cfg)
            if lam < best_lambda:
                best_lambda = lam
                best_theta = theta

    if pool is not None:
        consider(np.asarray(pool, dtype=np.float64))
        if best_theta is None:
            raise NoCandidateError("no adversarial candidate in the dataset pool")
        return best_theta, best_lambda

    n = cfg.n_candidates
    for _ in range(_CANDIDATE_ROUNDS):
        cands = rng.uniform(floor, ceil, size=(n, x.shape[0]))
        consider(cands)
        if best_theta is not None:
            return best_theta, best_lambda
        n *= 2
    if fallback is not None:
        consider(np.asarray(fallback, dtype=np.float64).reshape(1, -1))
        if best_theta is not None:
            return best_theta, best_lambda
    raise NoCandidateError(
        f"no adversarial candidate after {_CANDIDATE_ROUNDS} sampling rounds"
    )


def zero_order_optimize(
    forest: Forest,
    x,
    y: int,
    theta0: np.ndarray,
    cfg: AttackConfig,
    lambda0: float | None = None,
    frozen: Sequence[int] = (),
    rng: np.random.Generator | None = None,
) -> AttackResult:
    """Randomized gradient-free refinement of a search direction.

    Per iteration: perturb theta with a Gaussian draw scaled by beta and the
    per-feature mu, estimate the directional gradient from the two boundary
    distances, and step against it with a decaying step size. A step is kept
    only when it shrinks the boundary distance; failed or worsening draws are
    resampled a bounded number of times, so the accepted distances are
    non-increasing and the result never ends farther than its start. Frozen
    components are never perturbed.
    """
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta0, dtype=np.float64).copy()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if lambda0 is None:
        lambda0 = fine_grained_binary_search(
            forest, x, y, theta, float(np.linalg.norm(theta)), cfg
        )
    lam = lambda0
    free = np.ones(x.shape[0])
    free[list(frozen)] = 0.0
    trace = [lam]
    for t in range(cfg.T):
        eta_t = cfg.eta0 / np.sqrt(t + 1.0)
        for _ in range(_MAX_RESAMPLES):
            u = rng.standard_normal(x.shape[0]) * free
            theta_perturbed = theta + cfg.beta * (u * cfg.mu)
            try:
                g_perturbed = fine_grained_binary_search(
                    forest, x, y, theta_perturbed, lam, cfg
                )
            except DirectionError:
                continue
            grad = ((g_perturbed - lam) / cfg.beta) * u
            theta_next = theta - eta_t * grad
            try:
                g_next = fine_grained_binary_search(forest, x, y, theta_next, lam, cfg)
            except DirectionError:
                continue
            if g_next < lam:
                theta = theta_next
                lam = g_next
                break
        trace.append(lam)
    that = theta / np.linalg.norm(theta)
    x_adv = np.clip(x + lam * that, cfg.bounds.lower, cfg.bounds.upper)
    return AttackResult(
        x_org=x,
        x_adv=x_adv,
        distance=float(np.linalg.norm(x_adv - x)),
        theta_final=theta,
        trace=trace,
        mode="",
        iterations=cfg.T,
    )


def attack(
    forest: Forest,
    x,
    y: int,
    cfg: AttackConfig,
    mode: str = "muc",
    dataset: Dataset | None = None,
    sample_index: int = 0,
) -> AttackResult:
    """Full attack pipeline for one correctly classified sample.

    muc mode: region expansion, then initial-direction selection inside the
    region, then optimization; components never named by any core stay fixed
    throughout. baseline mode: the initial direction comes from dataset rows
    of other classes (capped at n_candidates) and all components are free.
    Search and optimization wall times are recorded separately.
    """
    x = np.asarray(x, dtype=np.float64)
    if predict(forest, x)[0] != y:
        raise ValueError("sample is not predicted as the given class; nothing to flip")
    rng = np.random.default_rng(cfg.seed ^ sample_index)
    t_search = time.perf_counter()
    tau = floor = ceil = None
    frozen: tuple[int, ...] = ()
    if mode == "muc":
        tau = expand_adversarial_region(forest, x, y, cfg)
        floor, ceil = region_bounds(x, tau, cfg.bounds)
        frozen = tuple(np.nonzero(tau == 0.0)[0])
        witness = decide_reachable(
            forest, Box.closed(floor, ceil), Target.not_class(y)
        ).witness
        theta0, lambda0 = select_initial_direction(
            forest, x, y, floor, ceil, cfg, rng, fallback=witness
        )
    elif mode == "baseline":
        if dataset is None:
            raise ValueError("baseline mode needs the dataset for its candidate pool")
        others = np.nonzero(dataset.y != y)[0]
        if others.size == 0:
            raise NoCandidateError("dataset has no rows of another class")
        cap = min(cfg.n_candidates, others.size)
        chosen = rng.choice(others, size=cap, replace=False)
        theta0, lambda0 = select_initial_direction(
            forest, x, y, None, None, cfg, rng, pool=dataset.X[chosen]
        )
    else:
        raise ValueError(f"unknown attack mode {mode!r}")
    search_ms = int(round((time.perf_counter() - t_search) * 1000))
    t_opt = time.perf_counter()
    result = zero_order_optimize(
        forest, x, y, theta0, cfg, lambda0=lambda0, frozen=frozen, rng=rng
    )
    result.opt_time_ms = int(round((time.perf_counter() - t_opt) * 1000))
    result.search_time_ms = search_ms
    result.mode = mode
    result.tau = tau
    result.floor = floor
    result.ceil = ceil
    return result


def mean_l2_distance(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean Euclidean distance over (original, adversarial) pairs."""
    if not pairs:
        raise ValueError("no pairs given")
    return float(
        np.mean([np.linalg.norm(np.asarray(a) - np.asarray(b)) for a, b in pairs])
    )
