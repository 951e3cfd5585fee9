"""Optimal-mixture derivation by mirror descent on the probability simplex.

The update is exponentiated-gradient:

    h_hat = h * exp(-eta * sum_i w_i grad_h L_i(N, D, h)),   h <- h_hat / sum(h_hat)

which keeps every iterate strictly inside the simplex.  On an objective
increase the step is halved and retried (up to 40 times) rather than failed;
convergence to a vertex is detected when a weight falls below 1e-12 and the
returned mixture snaps such weights to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import MixtureVector, TargetWeights, flops, js_distance, validate_mixture
from .errors import DomainMismatch, OptimizationDiverged
from .laws import LawParams, eval_law, get_family

VERTEX_SNAP = 1e-12
MAX_HALVINGS = 40


@dataclass(frozen=True)
class OptimizeConfig:
    """Mirror-descent knobs.

    Stops when the largest per-coordinate change falls below tol or after
    max_iter steps.  min_weight > 0 floors the converged weights post hoc
    (floor, then renormalize the rest proportionally).  h0 defaults to the
    uniform mixture.
    """

    eta: float = 0.1
    max_iter: int = 10000
    tol: float = 1e-9
    min_weight: float = 0.0
    h0: MixtureVector | None = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.min_weight < 0:
            raise ValueError("min_weight must be >= 0")


@dataclass(frozen=True)
class MixtureReport:
    """Optimal mixture with diagnostics and the iterate trajectory."""

    h_star: MixtureVector
    objective_value: float
    n_iter: int
    converged: bool
    flooring_applied: bool
    trajectory: tuple[MixtureVector, ...] = ()


def _weighted_objective_and_grad(laws, N, D, h: np.ndarray):
    value = 0.0
    grad = np.zeros(len(h))
    for law, w, names in laws:
        if w == 0.0:
            continue
        mix = MixtureVector(tuple(h), names)
        value += w * eval_law(law, N, D, mix)
        grad += w * get_family(law.family).grad_h(law.params, float(N),
                                                  float(D), h)
    return value, grad


def _floor_weights(h: np.ndarray, min_weight: float) -> tuple[np.ndarray, bool]:
    """Raise sub-floor weights to min_weight and rescale the rest to sum 1."""
    low = h < min_weight
    if not np.any(low):
        return h, False
    out = h.copy()
    out[low] = min_weight
    keep = ~low
    budget = 1.0 - min_weight * int(np.sum(low))
    out[keep] = h[keep] * (budget / np.sum(h[keep]))
    return out, True


def mirror_descent(laws: Sequence[tuple[LawParams, float]], N: int, D: int,
                   config: OptimizeConfig | None = None) -> MixtureReport:
    """Minimize the weighted loss sum over mixtures on the simplex.

    `laws` pairs each law with a nonnegative importance weight; all laws must
    share the same domain names in the same order.  The weighted objective is
    nonincreasing along accepted iterates.
    """
    config = config or OptimizeConfig()
    if not laws:
        raise ValueError("need at least one law")
    names = laws[0][0].domain_names
    for law, w in laws:
        if law.domain_names != names:
            raise DomainMismatch(
                f"law domains differ: {law.domain_names} vs {names}"
            )
        if w < 0:
            raise ValueError("law weights must be >= 0")
    total_w = sum(w for _, w in laws)
    if total_w <= 0:
        raise ValueError("at least one law weight must be positive")
    tagged = [(law, w, names) for law, w in laws]
    k = len(names)

    if config.h0 is not None:
        if config.h0.domain_names != names:
            raise DomainMismatch("h0 domains do not match the laws")
        h = config.h0.as_array()
    else:
        h = np.full(k, 1.0 / k)

    f_cur, grad = _weighted_objective_and_grad(tagged, N, D, h)
    if not np.isfinite(f_cur) or not np.all(np.isfinite(grad)):
        raise OptimizationDiverged("objective or gradient non-finite at h0")

    trajectory = [MixtureVector(tuple(h), names)]
    converged = False
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        eta = config.eta
        h_new, f_new = None, None
        for _ in range(MAX_HALVINGS + 1):
            # Shifting the gradient leaves the normalized update unchanged
            # but keeps the exponentials from overflowing.
            shifted = grad - np.min(grad)
            h_hat = h * np.exp(-eta * shifted)
            total = np.sum(h_hat)
            if total <= 0.0 or not np.isfinite(total):
                raise OptimizationDiverged("iterate left the simplex")
            candidate = h_hat / total
            f_cand, _ = _weighted_objective_and_grad(tagged, N, D, candidate)
            if f_cand <= f_cur:
                h_new, f_new = candidate, f_cand
                break
            eta *= 0.5
        if h_new is None:
            # 40 halvings without decrease: we are at numerical stationarity.
            converged = True
            break
        step = float(np.max(np.abs(h_new - h)))
        h, f_cur = h_new, f_new
        trajectory.append(MixtureVector(tuple(h), names))
        if step < config.tol:
            converged = True
            break
        if np.min(h) < VERTEX_SNAP:
            # A weight this small only shrinks further; report the vertex.
            converged = True
            break
        _, grad = _weighted_objective_and_grad(tagged, N, D, h)
        if not np.all(np.isfinite(grad)):
            raise OptimizationDiverged(f"non-finite gradient at iterate {n_iter}")

    h_final = np.where(h < VERTEX_SNAP, 0.0, h)
    h_final = h_final / np.sum(h_final)
    floored = False
    if config.min_weight > 0.0:
        h_final, floored = _floor_weights(h_final, config.min_weight)
    h_star = validate_mixture(h_final.tolist(), names)

    try:
        f_report = sum(
            w * eval_law(law, N, D, h_star) for law, w, _ in tagged if w > 0
        )
    except Exception:
        # Some laws (e.g. ge) cannot be evaluated at snapped boundary points;
        # fall back to the last interior iterate's value.
        f_report = f_cur
    return MixtureReport(
        h_star=h_star,
        objective_value=float(f_report),
        n_iter=n_iter,
        converged=converged,
        flooring_applied=floored,
        trajectory=tuple(trajectory),
    )


def corner_profile(laws: Mapping[str, LawParams], N: int, D: int,
                   config: OptimizeConfig | None = None
                   ) -> dict[str, MixtureVector]:
    """Optimal mixture per target when that target alone matters.

    Runs mirror descent with an indicator weight on each target's law; for
    well-separated domains each optimum sits at (or near) the corresponding
    simplex vertex.
    """
    out = {}
    for target, law in laws.items():
        others = [(l, 0.0) for t, l in laws.items() if t != target]
        report = mirror_descent([(law, 1.0)] + others, N, D, config)
        out[target] = report.h_star
    return out


def fixed_point_scan(laws: Mapping[str, LawParams], N: int, D: int,
                     grid: Sequence[TargetWeights],
                     config: OptimizeConfig | None = None,
                     fixed_point_tol: float = 1e-3
                     ) -> list[tuple[TargetWeights, MixtureVector, float, bool]]:
    """Scan target-weight vectors w for fixed points of w -> h*(w).

    For each w the optimal training mixture h*(w) is computed and compared to
    w by Jensen-Shannon distance; entries with distance below
    fixed_point_tol are flagged as fixed points.  Requires targets and
    training domains to be the same set (the map must be simplex-to-simplex).
    """
    law_list = list(laws.items())
    domain_names = law_list[0][1].domain_names
    out = []
    for w in grid:
        weight_map = w.as_dict()
        if set(weight_map) != set(laws):
            raise DomainMismatch(
                f"grid point targets {tuple(weight_map)} != laws {tuple(laws)}"
            )
        weighted = [(law, weight_map[t]) for t, law in law_list]
        report = mirror_descent(weighted, N, D, config)
        js = js_distance(w.as_mixture(domain_names), report.h_star)
        out.append((w, report.h_star, js, js < fixed_point_tol))
    return out


def asymptote_trace(laws: Mapping[str, LawParams] | Sequence[tuple[LawParams, float]],
                    w: TargetWeights | None,
                    schedule: Sequence[tuple[int, int]],
                    config: OptimizeConfig | None = None
                    ) -> list[MixtureVector]:
    """Optimal mixture along a compute schedule of (N, D) pairs.

    The schedule must be nonempty and strictly increasing in flops; it may
    scale N only, D only, or both.  Additive laws yield a constant trace;
    joint and full laws drift toward the optimum of their asymptotic loss.
    """
    if len(schedule) == 0:
        raise ValueError("schedule must be nonempty")
    budgets = [flops(n, d) for n, d in schedule]
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("schedule must be strictly increasing in flops")
    if isinstance(laws, Mapping):
        if w is None:
            weighted = [(law, 1.0) for law in laws.values()]
        else:
            weight_map = w.as_dict()
            weighted = [(law, weight_map.get(t, 0.0)) for t, law in laws.items()]
    else:
        weighted = list(laws)
    return [
        mirror_descent(weighted, n, d, config).h_star for n, d in schedule
    ]
