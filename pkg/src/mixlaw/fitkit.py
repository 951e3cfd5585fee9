"""Robust law fitting: Huber objective, L-BFGS local solves wrapped in
basin-hopping, random-search initialization, and MRE reporting.

The search runs in the unconstrained internal parameterization from
:mod:`mixlaw.laws` (logs for positive parameters, a sigmoid onto (0, 5) for
range-constrained exponents, raw for sign-free ones), so no projection or
box constraints are needed.  Restart chains are independent given per-restart
seeds spawned from the configured seed; results do not depend on whether the
chains run sequentially or in parallel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .core import Dataset
from .errors import (
    DegenerateMixtureTerm,
    DomainMismatch,
    EmptyDataset,
    FitFailed,
    InvalidObservation,
    NonFiniteObjective,
    ShapeMismatch,
)
from .laws import (
    GE_MIN_WEIGHT,
    LawParams,
    internal_chain,
    internal_kinds,
    jac_batch,
    law_dim,
    pack_params,
    predict_batch,
    unpack_natural,
    unpack_params,
)

_HUGE = 1e300

# Random-search sampling box, in internal coordinates.
_LOG_LO, _LOG_HI = np.log(1e-3), np.log(1e3)
# Pre-images of exponents 0.05 and 1.5 under the sigmoid onto (0, 5).
_SIG_LO = float(np.log(0.01 / 0.99))
_SIG_HI = float(np.log(0.3 / 0.7))
_RAW_LO, _RAW_HI = -1.5, 1.5


@dataclass(frozen=True)
class FitConfig:
    """Knobs for the global fit.

    delta is the Huber threshold; hops are basin-hopping iterations per
    restart, each one an L-BFGS solve from a Gaussian perturbation of the
    current minimum.
    """

    delta: float = 1e-3
    n_restarts: int = 32
    n_hops: int = 100
    hop_step: float = 0.5
    hop_temperature: float = 1.0
    lbfgs_memory: int = 10
    lbfgs_max_iter: int = 500
    grad_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.n_restarts < 1 or self.lbfgs_memory < 1 or self.lbfgs_max_iter < 1:
            raise ValueError("n_restarts, lbfgs_memory, lbfgs_max_iter must be >= 1")
        if self.n_hops < 0:
            raise ValueError("n_hops must be >= 0")
        if self.hop_step <= 0 or self.hop_temperature <= 0 or self.grad_tol <= 0:
            raise ValueError("hop_step, hop_temperature, grad_tol must be positive")


@dataclass(frozen=True)
class FitResult:
    """Best law found plus fit diagnostics."""

    law: LawParams
    huber_value: float
    train_mre_percent: float
    seed: int
    restarts_used: int
    hops_used: int
    lbfgs_calls: int
    converged: bool


def huber(residual, delta: float):
    """x^2/2 inside |x| < delta, delta*(|x| - delta/2) outside.

    Continuous with continuous derivative at |x| = delta.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.abs(np.asarray(residual, dtype=float))
    out = np.where(x < delta, 0.5 * x * x, delta * (x - 0.5 * delta))
    return float(out) if np.isscalar(residual) else out


def huber_deriv(residual, delta: float):
    """Derivative of the Huber function: x inside the threshold, +/-delta outside."""
    x = np.asarray(residual, dtype=float)
    return np.where(np.abs(x) < delta, x, delta * np.sign(x))


def mre(predictions: Sequence[float], observations: Sequence[float]) -> float:
    """Mean relative error |pred - obs| / obs, as a percentage."""
    pred = np.asarray(predictions, dtype=float)
    obs = np.asarray(observations, dtype=float)
    if pred.shape != obs.shape or pred.size == 0:
        raise ShapeMismatch(
            f"predictions have shape {pred.shape}, observations {obs.shape}"
        )
    if np.any(obs <= 0.0):
        raise InvalidObservation("observations must be strictly positive")
    return float(np.mean(np.abs(pred - obs) / obs) * 100.0)


def _ge_context(family: str, data: Dataset, target: str) -> dict | None:
    if family != "ge":
        return None
    if target not in data.domain_names:
        raise DomainMismatch(
            f"the ge family predicts a training domain's loss; "
            f"{target!r} is not among {data.domain_names}"
        )
    return {"domain_index": data.domain_names.index(target)}


def _make_objective(family: str, k: int, N, D, H, losses, delta: float,
                    context: dict | None) -> Callable:
    """Value-and-gradient closure for the mean Huber fitting objective."""
    p = len(losses)

    def objective(z: np.ndarray) -> tuple[float, np.ndarray]:
        params = unpack_natural(family, z, k, context)
        pred = predict_batch(family, params, N, D, H)
        resid = losses - pred
        value = float(np.mean(huber(resid, delta)))
        jac = jac_batch(family, params, N, D, H)
        grad = -(huber_deriv(resid, delta) @ jac) / p
        grad = grad * internal_chain(family, z, k)
        if not np.isfinite(value):
            value = _HUGE
        grad = np.nan_to_num(grad, nan=0.0, posinf=_HUGE, neginf=-_HUGE)
        return value, grad

    return objective


def fit_objective(family: str, z_internal: np.ndarray, data: Dataset,
                  target: str, delta: float) -> tuple[float, np.ndarray]:
    """Mean Huber loss over the target's records and its internal gradient."""
    N, D, H, losses = data.arrays_for_target(target)
    if len(losses) == 0:
        raise EmptyDataset(f"no records with target {target!r}")
    context = _ge_context(family, data, target)
    obj = _make_objective(family, data.k, N, D, H, losses, delta, context)
    return obj(np.asarray(z_internal, dtype=float))


@dataclass(frozen=True)
class LbfgsResult:
    z: np.ndarray
    value: float
    n_evals: int
    converged: bool


def lbfgs_minimize(objective: Callable, z0: np.ndarray, memory: int = 10,
                   max_iter: int = 500, grad_tol: float = 1e-9) -> LbfgsResult:
    """Limited-memory quasi-Newton local minimization.

    The line search enforces sufficient decrease and curvature, so the
    objective never increases across accepted steps.  Stops when the
    sup-norm of the gradient falls below grad_tol or after max_iter
    iterations; a failed line search returns the best iterate with
    converged=False.
    """
    z0 = np.asarray(z0, dtype=float)
    f0, _ = objective(z0)
    if not np.isfinite(f0):
        raise NonFiniteObjective(f"objective is {f0} at the starting point")
    res = _scipy_minimize(
        objective,
        z0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxcor": memory,
            "maxiter": max_iter,
            "gtol": grad_tol,
            "ftol": 1e-22,
            "maxls": 50,
        },
    )
    return LbfgsResult(
        z=np.asarray(res.x, dtype=float),
        value=float(res.fun),
        n_evals=int(res.nfev) + 1,
        converged=bool(res.status == 0),
    )


@dataclass(frozen=True)
class BasinHopResult:
    z: np.ndarray
    value: float
    n_lbfgs_calls: int
    hops: int
    converged: bool
    best_trace: tuple[float, ...] = field(repr=False, default=())
    """best_trace[t] is the best value seen after t+1 local solves."""


def basin_hop(objective: Callable, z0: np.ndarray, config: FitConfig,
              rng: np.random.Generator) -> BasinHopResult:
    """Global search alternating L-BFGS local solves with random perturbation.

    Each hop adds Gaussian noise (scale hop_step, adapted every 10 hops
    toward 50% acceptance) to the current minimum in internal coordinates,
    re-minimizes, and accepts by the Metropolis rule
    exp(-(f_new - f_cur)/temperature).  Returns the best minimum seen, which
    is never worse than a single local solve from z0.
    """
    local = lambda z: lbfgs_minimize(
        objective, z, config.lbfgs_memory, config.lbfgs_max_iter, config.grad_tol
    )
    cur = local(np.asarray(z0, dtype=float))
    calls = 1
    best_z, best_f, best_conv = cur.z, cur.value, cur.converged
    trace = [best_f]
    step = config.hop_step
    accepted_in_window = 0
    for hop in range(1, config.n_hops + 1):
        trial = local(cur.z + rng.normal(0.0, step, size=len(cur.z)))
        calls += 1
        delta_f = trial.value - cur.value
        accept = delta_f <= 0.0 or rng.random() < np.exp(
            -delta_f / config.hop_temperature
        )
        if accept:
            cur = trial
            accepted_in_window += 1
        if trial.value < best_f:
            best_z, best_f, best_conv = trial.z, trial.value, trial.converged
        trace.append(best_f)
        if hop % 10 == 0:
            rate = accepted_in_window / 10.0
            if rate > 0.5:
                step /= 0.9
            elif rate < 0.5:
                step *= 0.9
            accepted_in_window = 0
    return BasinHopResult(
        z=best_z,
        value=best_f,
        n_lbfgs_calls=calls,
        hops=config.n_hops,
        converged=best_conv,
        best_trace=tuple(trace),
    )


def _sample_box(family: str, k: int, min_loss: float,
                rng: np.random.Generator) -> np.ndarray:
    z = np.empty(law_dim(family, k))
    for i, (name, kind) in enumerate(internal_kinds(family, k)):
        if name == "E":
            e_val = min_loss * max(rng.uniform(), 1e-12)
            z[i] = np.log(e_val) if kind == "log" else e_val
        elif kind == "log":
            z[i] = rng.uniform(_LOG_LO, _LOG_HI)
        elif kind == "sig":
            z[i] = rng.uniform(_SIG_LO, _SIG_HI)
        else:
            z[i] = rng.uniform(_RAW_LO, _RAW_HI)
    return z


def random_init(family: str, k: int, data: Dataset, target: str,
                rng: np.random.Generator) -> np.ndarray:
    """Draw an internal parameter vector from the documented sampling box.

    Log parameters are uniform on [ln 1e-3, ln 1e3], constrained-exponent
    pre-images uniform on the sigmoid pre-image of (0.05, 1.5), sign-free
    parameters uniform on [-1.5, 1.5].  E is uniform on (0, min observed
    target loss).
    """
    losses = [r.loss for r in data.for_target(target)]
    if not losses:
        raise EmptyDataset(f"no records with target {target!r}")
    return _sample_box(family, k, min(losses), rng)


def _run_chain(family, k, N, D, H, losses, delta, context, config, seed_seq,
               z_start=None):
    """One restart: random init (unless a start is given) then basin-hopping.

    Self-contained so chains can run in worker processes; every draw depends
    only on the chain's seed sequence.
    """
    rng = np.random.default_rng(seed_seq)
    objective = _make_objective(family, k, N, D, H, losses, delta, context)
    if z_start is None:
        z0 = _sample_box(family, k, float(np.min(losses)), rng)
    else:
        z0 = np.asarray(z_start, dtype=float)
    try:
        return basin_hop(objective, z0, config, rng)
    except NonFiniteObjective:
        return None


def fit_law(family: str, data: Dataset, target: str, config: FitConfig,
            warm_start: LawParams | None = None, n_jobs: int = 1) -> FitResult:
    """Fit a law family to a dataset's target records.

    Runs config.n_restarts independent random-init basin-hopping chains and
    keeps the smallest Huber value, breaking ties by restart order.  An
    optional warm_start law of the same family adds one extra chain started
    from its packed parameters (useful for nested families, e.g. seeding a
    joint fit from an embedded additive fit).  Reproducible given
    (data, config.seed); n_jobs > 1 parallelizes restarts without changing
    the result.
    """
    N, D, H, losses = data.arrays_for_target(target)
    p = len(losses)
    if p == 0:
        raise EmptyDataset(f"no records with target {target!r}")
    context = _ge_context(family, data, target)
    if context is not None:
        col = H[:, context["domain_index"]]
        if np.any(col < GE_MIN_WEIGHT):
            raise DegenerateMixtureTerm(
                f"{int(np.sum(col < GE_MIN_WEIGHT))} records have "
                f"h[{target}] below the ge floor {GE_MIN_WEIGHT}"
            )
    k = data.k
    dim = law_dim(family, k)
    if p < 3 * dim:
        warnings.warn(
            f"only {p} records for {dim} parameters of {family!r}; "
            f"at least {3 * dim} are recommended",
            stacklevel=2,
        )

    starts: list[np.ndarray | None] = [None] * config.n_restarts
    if warm_start is not None:
        if warm_start.family != family:
            raise ValueError(
                f"warm start is a {warm_start.family!r} law, fitting {family!r}"
            )
        if warm_start.domain_names != data.domain_names:
            raise DomainMismatch("warm start and data disagree on domains")
        starts.append(pack_params(warm_start))

    seed_seqs = np.random.SeedSequence(config.seed).spawn(len(starts))
    args = [
        (family, k, N, D, H, losses, config.delta, context, config, ss, z0)
        for ss, z0 in zip(seed_seqs, starts)
    ]
    if n_jobs != 1:
        from joblib import Parallel, delayed

        chains = Parallel(n_jobs=n_jobs)(delayed(_run_chain)(*a) for a in args)
    else:
        chains = [_run_chain(*a) for a in args]

    best_idx, best = None, None
    for idx, res in enumerate(chains):
        if res is None or not np.isfinite(res.value):
            continue
        if best is None or res.value < best.value:
            best_idx, best = idx, res
    if best is None:
        raise FitFailed(f"all {len(chains)} restarts failed for {family!r}")

    law = unpack_params(family, best.z, data.domain_names, context)
    pred = predict_batch(family, law.params, N, D, H)
    # A line search can fail at float exhaustion right next to the minimum;
    # a small final gradient still counts as a converged fit.
    objective = _make_objective(family, k, N, D, H, losses, config.delta,
                                context)
    _, final_grad = objective(best.z)
    converged = best.converged or bool(
        np.max(np.abs(final_grad)) <= 1e3 * config.grad_tol
    )
    return FitResult(
        law=law,
        huber_value=best.value,
        train_mre_percent=mre(pred, losses),
        seed=config.seed,
        restarts_used=len(chains),
        hops_used=sum(r.hops for r in chains if r is not None),
        lbfgs_calls=sum(r.n_lbfgs_calls for r in chains if r is not None),
        converged=converged,
    )


def evaluate_mre(law: LawParams, data: Dataset, target: str) -> tuple[float, int]:
    """MRE% of a fitted law on a dataset's target records, with the count."""
    N, D, H, losses = data.arrays_for_target(target)
    if len(losses) == 0:
        raise EmptyDataset(f"no records with target {target!r}")
    if law.domain_names != data.domain_names:
        raise DomainMismatch(
            f"law domains {law.domain_names} != data domains {data.domain_names}"
        )
    pred = predict_batch(law.family, law.params, N, D, H)
    return mre(pred, losses), len(losses)


# ---------------------------------------------------------------------------
# Search-efficiency study: basin-hopping vs. repeated random-restart L-BFGS
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchTraces:
    """Best-so-far Huber value after each local solve, per seed and method."""

    basin_hopping: tuple[tuple[float, ...], ...]
    random_restart: tuple[tuple[float, ...], ...]

    def best_known(self) -> float:
        return min(
            min(t[-1] for t in self.basin_hopping),
            min(t[-1] for t in self.random_restart),
        )

    @staticmethod
    def calls_to_reach(trace: Sequence[float], threshold: float) -> int:
        """1-based index of the first solve at or below threshold; one past
        the budget if the trace never reaches it."""
        for i, v in enumerate(trace):
            if v <= threshold:
                return i + 1
        return len(trace) + 1


def search_efficiency_study(family: str, data: Dataset, target: str,
                            config: FitConfig, n_seeds: int,
                            budget: int) -> SearchTraces:
    """Compare local-solve budgets needed by basin-hopping and by independent
    random-restart L-BFGS to drive the Huber objective down.

    Both methods spend exactly `budget` local solves per seed and share the
    sampling box for initial parameters.
    """
    N, D, H, losses = data.arrays_for_target(target)
    if len(losses) == 0:
        raise EmptyDataset(f"no records with target {target!r}")
    context = _ge_context(family, data, target)
    k = data.k
    hop_config = FitConfig(
        delta=config.delta, n_restarts=1, n_hops=budget - 1,
        hop_step=config.hop_step, hop_temperature=config.hop_temperature,
        lbfgs_memory=config.lbfgs_memory, lbfgs_max_iter=config.lbfgs_max_iter,
        grad_tol=config.grad_tol, seed=config.seed,
    )
    bh_traces, rr_traces = [], []
    root = np.random.SeedSequence(config.seed)
    for bh_seq, rr_seq in zip(*[iter(root.spawn(2 * n_seeds))] * 2):
        res = _run_chain(family, k, N, D, H, losses, config.delta, context,
                         hop_config, bh_seq)
        bh_traces.append(res.best_trace)

        rng = np.random.default_rng(rr_seq)
        objective = _make_objective(family, k, N, D, H, losses, config.delta,
                                    context)
        best = np.inf
        trace = []
        for _ in range(budget):
            z0 = random_init(family, k, data, target, rng)
            local = lbfgs_minimize(objective, z0, config.lbfgs_memory,
                                   config.lbfgs_max_iter, config.grad_tol)
            best = min(best, local.value)
            trace.append(best)
        rr_traces.append(tuple(trace))
    return SearchTraces(tuple(bh_traces), tuple(rr_traces))
