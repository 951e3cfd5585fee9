"""Synthetic-oracle generation and experiment-design studies.

A DesignSpec describes a grid of training runs (model sizes, token
checkpoints, mixtures) plus ground-truth laws per target and a noise model;
synth_runs turns it into a Dataset exactly as a sweep of real training runs
would.  The studies here answer design questions: how many distinct mixtures
a fit needs (runcount_study) and how the law families compare on a
fixed-budget slice (law_family_comparison).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .core import Dataset, MixtureVector, RunRecord, validate_mixture
from .errors import (
    DomainMismatch,
    FitFailed,
    InfeasibleGrid,
    InfeasibleSplit,
    MixLawError,
)
from .fitkit import FitConfig, FitResult, evaluate_mre, fit_law
from .laws import LawParams

_GRID_EPS = 1e-12

NOISE_KINDS = ("none", "multiplicative_lognormal")


@dataclass(frozen=True)
class NoiseModel:
    """Observation noise applied to synthesized losses.

    multiplicative_lognormal multiplies each loss by exp(sigma * g) with g
    standard normal; "none" leaves losses exact and requires sigma = 0.
    """

    kind: str = "none"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}")
        if self.kind == "none" and self.sigma != 0.0:
            raise ValueError("sigma must be 0 for the 'none' noise model")
        if self.kind != "none" and self.sigma <= 0.0:
            raise ValueError("sigma must be positive for lognormal noise")


def even_spacing(lo: int, hi: int, count: int, spacing: str = "linear"
                 ) -> tuple[int, ...]:
    """Evenly spaced integer budgets, linear or logarithmic."""
    if count < 1 or lo < 1 or hi < lo:
        raise ValueError("need count >= 1 and 1 <= lo <= hi")
    if count == 1:
        return (int(lo),)
    if spacing == "linear":
        vals = np.linspace(lo, hi, count)
    elif spacing == "log":
        vals = np.geomspace(lo, hi, count)
    else:
        raise ValueError(f"spacing must be 'linear' or 'log', got {spacing!r}")
    out = tuple(int(round(v)) for v in vals)
    if len(set(out)) != len(out):
        raise ValueError(f"spacing {lo}..{hi} over {count} points collides")
    return out


def simplex_grid(k: int, step: float, min_weight: float = 0.0,
                 domain_names: Sequence[str] | None = None
                 ) -> list[MixtureVector]:
    """All mixtures whose weights are multiples of `step`, each at least
    `min_weight`, summing to one.

    The count is the number of compositions of round(1/step) units into k
    parts of at least round(min_weight/step) units each.
    """
    if k < 1:
        raise InfeasibleGrid("k must be >= 1")
    if step <= 0 or step > 1:
        raise InfeasibleGrid(f"step {step} outside (0, 1]")
    units = round(1.0 / step)
    if abs(units * step - 1.0) > _GRID_EPS:
        raise InfeasibleGrid(f"step {step} does not divide 1")
    floor_units = round(min_weight / step)
    if abs(floor_units * step - min_weight) > _GRID_EPS or min_weight < 0:
        raise InfeasibleGrid(
            f"min_weight {min_weight} is not a nonnegative multiple of {step}"
        )
    if k * min_weight > 1.0 + _GRID_EPS:
        raise InfeasibleGrid(f"k * min_weight = {k * min_weight} exceeds 1")
    names = tuple(domain_names) if domain_names is not None else tuple(
        f"d{i}" for i in range(k)
    )
    if len(names) != k:
        raise InfeasibleGrid(f"{len(names)} domain names for k = {k}")

    def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
        if parts == 1:
            if total >= floor_units:
                yield (total,)
            return
        for first in range(floor_units, total - floor_units * (parts - 1) + 1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    return [
        validate_mixture([u / units for u in combo], names)
        for combo in compositions(units, k)
    ]


def sample_mixtures(k: int, n: int, min_weight: float,
                    rng: np.random.Generator,
                    domain_names: Sequence[str] | None = None
                    ) -> list[MixtureVector]:
    """n mixtures uniform on the simplex restricted to weights >= min_weight.

    Uses a flat Dirichlet draw mapped affinely onto the restricted region,
    which is exactly uniform there.
    """
    if k < 1 or n < 0:
        raise InfeasibleGrid("need k >= 1 and n >= 0")
    if min_weight < 0 or k * min_weight >= 1.0:
        raise InfeasibleGrid(f"k * min_weight = {k * min_weight} must be < 1")
    names = tuple(domain_names) if domain_names is not None else tuple(
        f"d{i}" for i in range(k)
    )
    scale = 1.0 - k * min_weight
    out = []
    for _ in range(n):
        u = rng.dirichlet(np.ones(k))
        out.append(validate_mixture((min_weight + scale * u).tolist(), names))
    return out


@dataclass(frozen=True)
class DesignSpec:
    """A full synthetic experiment: budget grid, mixtures, truth, noise."""

    sizes: tuple[int, ...]
    token_checkpoints: tuple[int, ...]
    mixtures: tuple[MixtureVector, ...]
    truth: dict[str, LawParams]
    noise: NoiseModel = NoiseModel()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(
            self, "token_checkpoints",
            tuple(int(t) for t in self.token_checkpoints),
        )
        object.__setattr__(self, "mixtures", tuple(self.mixtures))
        if not self.sizes or not self.token_checkpoints or not self.mixtures:
            raise ValueError("sizes, token_checkpoints, mixtures must be nonempty")
        if min(self.sizes) < 1 or min(self.token_checkpoints) < 1:
            raise ValueError("sizes and token checkpoints must be >= 1")
        if not self.truth:
            raise ValueError("need at least one truth law")
        names = self.mixtures[0].domain_names
        for mix in self.mixtures:
            if mix.domain_names != names:
                raise DomainMismatch("mixtures disagree on domain names")
        for target, law in self.truth.items():
            if law.domain_names != names:
                raise DomainMismatch(
                    f"truth law for {target!r} has domains {law.domain_names}, "
                    f"mixtures have {names}"
                )

    @property
    def domain_names(self) -> tuple[str, ...]:
        return self.mixtures[0].domain_names


def synth_runs(spec: DesignSpec) -> Dataset:
    """One record per (mixture, size, checkpoint, target) from the truth laws.

    A run is one (mixture, size) pair; its id is shared by every checkpoint
    and target, mirroring constant-LR training where a single run yields many
    token counts.  Deterministic per seed, bit-identical on regeneration.
    """
    from .laws import eval_law

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    lognormal = spec.noise.kind == "multiplicative_lognormal"
    records = []
    for mi, mixture in enumerate(spec.mixtures):
        for si, n_params in enumerate(spec.sizes):
            run_id = f"r{si:02d}x{mi:03d}"
            for tokens in spec.token_checkpoints:
                for target, law in spec.truth.items():
                    loss = eval_law(law, n_params, tokens, mixture)
                    if lognormal:
                        loss *= float(np.exp(spec.noise.sigma * rng.standard_normal()))
                    records.append(
                        RunRecord(run_id, n_params, tokens, mixture, target, loss)
                    )
    return Dataset(tuple(records), spec.domain_names)


def fixed_budget_slice(data: Dataset, model_params: int | None = None,
                       tokens: int | None = None) -> Dataset:
    """Records matching the given model size and/or token count."""
    recs = tuple(
        r for r in data.records
        if (model_params is None or r.model_params == model_params)
        and (tokens is None or r.tokens == tokens)
    )
    return Dataset(recs, data.domain_names)


def distinct_mixtures(data: Dataset, target: str | None = None
                      ) -> list[MixtureVector]:
    """Unique mixtures (by exact weights) in first-appearance order."""
    seen: dict[tuple[float, ...], MixtureVector] = {}
    for rec in data.records:
        if target is not None and rec.target != target:
            continue
        seen.setdefault(rec.mixture.weights, rec.mixture)
    return list(seen.values())


def split_by_mixture(data: Dataset, train_mixtures: Sequence[MixtureVector],
                     target: str | None = None) -> tuple[Dataset, Dataset]:
    """Partition records into those whose mixture is in the train list and
    the rest.  Restricting to one target first keeps other targets out."""
    train_keys = {m.weights for m in train_mixtures}
    train, test = [], []
    for rec in data.records:
        if target is not None and rec.target != target:
            continue
        (train if rec.mixture.weights in train_keys else test).append(rec)
    return (
        Dataset(tuple(train), data.domain_names),
        Dataset(tuple(test), data.domain_names),
    )


@dataclass(frozen=True)
class RuncountRow:
    """Held-out MRE statistics for fits using q distinct training mixtures."""

    q: int
    mre_median: float
    mre_q25: float
    mre_q75: float
    n_seeds: int


def _runcount_arm(data, family, target, mixtures, q, seed_seq, fit_config):
    rng = np.random.default_rng(seed_seq)
    order = rng.permutation(len(mixtures))
    train_mix = [mixtures[i] for i in order[:q]]
    train, test = split_by_mixture(data, train_mix, target)
    cfg = dataclasses.replace(
        fit_config, seed=int(seed_seq.generate_state(1)[0])
    )
    result = fit_law(family, train, target, cfg)
    test_mre, _ = evaluate_mre(result.law, test, target)
    return test_mre


def runcount_study(data: Dataset, family: str, target: str,
                   q_values: Sequence[int], n_seeds: int,
                   fit_config: FitConfig, n_jobs: int = 1
                   ) -> list[RuncountRow]:
    """Held-out MRE as a function of the number of training mixtures.

    For each q and seed, q mixtures are drawn at random for training and the
    fit is scored on the remaining mixtures' records.  The mixture partitions
    depend only on fit_config.seed, so sweeps of different families with the
    same config are directly comparable.
    """
    mixtures = distinct_mixtures(data, target)
    n_mix = len(mixtures)
    for q in q_values:
        if q < 1 or q >= n_mix:
            raise InfeasibleSplit(
                f"q = {q} leaves no test mixtures out of {n_mix}"
            )
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    root = np.random.SeedSequence(fit_config.seed)
    children = root.spawn(len(q_values) * n_seeds)
    tasks = [
        (data, family, target, mixtures, q, children[qi * n_seeds + si],
         fit_config)
        for qi, q in enumerate(q_values)
        for si in range(n_seeds)
    ]
    if n_jobs != 1:
        from joblib import Parallel, delayed

        values = Parallel(n_jobs=n_jobs)(
            delayed(_runcount_arm)(*t) for t in tasks
        )
    else:
        values = [_runcount_arm(*t) for t in tasks]
    rows = []
    for qi, q in enumerate(q_values):
        arm = np.asarray(values[qi * n_seeds:(qi + 1) * n_seeds])
        rows.append(
            RuncountRow(
                q=q,
                mre_median=float(np.median(arm)),
                mre_q25=float(np.percentile(arm, 25)),
                mre_q75=float(np.percentile(arm, 75)),
                n_seeds=n_seeds,
            )
        )
    return rows


@dataclass(frozen=True)
class ComparisonRow:
    """One law family's scores in a fixed-budget comparison report."""

    family: str
    target: str
    train_mre_percent: float
    test_mre_percent: float
    huber_value: float
    converged: bool
    fitted: bool


def comparison_families(data: Dataset, target: str) -> tuple[str, ...]:
    """Default family list for fixed-budget comparisons: the additive law
    with the budget terms dropped, the four ye variants, and (when the
    target is a training domain) the ge law."""
    fams = ("additive-fixed-nd", "ye-m1", "ye-m2", "ye-m3", "ye-m4")
    if target in data.domain_names:
        fams = fams + ("ge",)
    return fams


def law_family_comparison(data: Dataset, target: str,
                          fit_config: FitConfig,
                          families: Sequence[str] | None = None,
                          n_train_mixtures: int = 25,
                          n_jobs: int = 1) -> list[ComparisonRow]:
    """Fit several mixture-only law families on a shared train/test mixture
    split of (typically fixed-budget) data and tabulate train/test MRE.

    A family that fails to fit is reported with fitted=False rather than
    aborting the comparison; hard-to-fit forms (ye-m3 in particular) may
    also come back with converged=False.
    """
    if families is None:
        families = comparison_families(data, target)
    mixtures = distinct_mixtures(data, target)
    n_mix = len(mixtures)
    if not 1 <= n_train_mixtures < n_mix:
        raise InfeasibleSplit(
            f"n_train_mixtures = {n_train_mixtures} infeasible with "
            f"{n_mix} mixtures"
        )
    rng = np.random.default_rng(np.random.SeedSequence(fit_config.seed))
    order = rng.permutation(n_mix)
    train_mix = [mixtures[i] for i in order[:n_train_mixtures]]
    train, test = split_by_mixture(data, train_mix, target)

    def one(family: str) -> ComparisonRow:
        try:
            result: FitResult = fit_law(family, train, target, fit_config)
            test_mre, _ = evaluate_mre(result.law, test, target)
            return ComparisonRow(
                family=family, target=target,
                train_mre_percent=result.train_mre_percent,
                test_mre_percent=test_mre,
                huber_value=result.huber_value,
                converged=result.converged, fitted=True,
            )
        except (FitFailed, MixLawError):
            return ComparisonRow(
                family=family, target=target,
                train_mre_percent=float("nan"),
                test_mre_percent=float("nan"),
                huber_value=float("nan"),
                converged=False, fitted=False,
            )

    if n_jobs != 1:
        from joblib import Parallel, delayed

        return list(Parallel(n_jobs=n_jobs)(delayed(one)(f) for f in families))
    return [one(f) for f in families]
