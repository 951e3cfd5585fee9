"""Core types for mixtures, training-run records, and compute accounting.

Everything here is immutable after construction and safe for concurrent use.
Losses are stored in nats throughout; callers converting from bits must do so
before building records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainMismatch, InvalidMixture

# Sum-to-one tolerances: construction accepts drift up to SUM_ATOL, the
# forgiving validator renormalizes drift up to RENORM_TOL.
SUM_ATOL = 1e-9
RENORM_TOL = 1e-6


@dataclass(frozen=True)
class MixtureVector:
    """A point on the k-simplex: domain weights paired with domain names."""

    weights: tuple[float, ...]
    domain_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "domain_names", tuple(self.domain_names))
        k = len(self.weights)
        if k < 1:
            raise InvalidMixture("a mixture needs at least one domain")
        if len(self.domain_names) != k:
            raise InvalidMixture(
                f"{k} weights but {len(self.domain_names)} domain names"
            )
        if len(set(self.domain_names)) != k:
            raise InvalidMixture(f"duplicate domain names: {self.domain_names}")
        for name, w in zip(self.domain_names, self.weights):
            if not np.isfinite(w) or w < 0.0:
                raise InvalidMixture(f"weight for {name!r} is {w}, must be >= 0")
        total = sum(self.weights)
        if abs(total - 1.0) > SUM_ATOL:
            raise InvalidMixture(f"weights sum to {total!r}, not 1")

    @property
    def k(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def weight_of(self, name: str) -> float:
        try:
            return self.weights[self.domain_names.index(name)]
        except ValueError:
            raise DomainMismatch(f"no domain named {name!r}") from None


def validate_mixture(
    raw_weights: Sequence[float], names: Sequence[str]
) -> MixtureVector:
    """Build a MixtureVector, renormalizing small sum drift.

    Weights whose sum is within RENORM_TOL of 1 are rescaled to sum to
    exactly 1.0; anything further off is rejected.  Validating an
    already-exact mixture returns it bit-for-bit unchanged.
    """
    if len(raw_weights) == 0 or len(raw_weights) != len(names):
        raise InvalidMixture(
            f"{len(raw_weights)} weights and {len(names)} names; need equal, nonempty"
        )
    ws = [float(w) for w in raw_weights]
    for name, w in zip(names, ws):
        if not np.isfinite(w) or w < 0.0:
            raise InvalidMixture(f"weight for {name!r} is {w}, must be >= 0")
    total = math.fsum(ws)
    if abs(total - 1.0) > RENORM_TOL:
        raise InvalidMixture(f"weights sum to {total!r}, outside tolerance {RENORM_TOL}")
    if abs(total - 1.0) > SUM_ATOL:
        ws = [w / total for w in ws]
        # Division can leave the sum a few ulps off; push the residual onto
        # the largest entry until the stored sum is exactly 1.0, so the
        # result revalidates bit-for-bit.
        i = max(range(len(ws)), key=lambda j: ws[j])
        for _ in range(10):
            resid = math.fsum(ws) - 1.0
            if resid == 0.0:
                break
            ws[i] -= resid
    return MixtureVector(tuple(ws), tuple(names))


def uniform_mixture(names: Sequence[str]) -> MixtureVector:
    """The barycenter of the simplex over the given domains."""
    k = len(names)
    return validate_mixture([1.0 / k] * k, names)


@dataclass(frozen=True)
class RunRecord:
    """One observation: a model of `model_params` parameters trained on
    `tokens` tokens with mixture `mixture`, evaluated on `target`.

    The same run_id may appear with several `tokens` values: constant-LR
    runs yield one record per checkpoint.
    """

    run_id: str
    model_params: int
    tokens: int
    mixture: MixtureVector
    target: str
    loss: float

    def __post_init__(self):
        if self.model_params < 1:
            raise ValueError(f"model_params must be >= 1, got {self.model_params}")
        if self.tokens < 1:
            raise ValueError(f"tokens must be >= 1, got {self.tokens}")
        if not (self.loss > 0.0 and np.isfinite(self.loss)):
            raise ValueError(f"loss must be a positive finite real, got {self.loss}")


@dataclass(frozen=True)
class Dataset:
    """A collection of run records sharing one ordered set of domains."""

    records: tuple[RunRecord, ...]
    domain_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "domain_names", tuple(self.domain_names))
        for rec in self.records:
            if rec.mixture.domain_names != self.domain_names:
                raise DomainMismatch(
                    f"record {rec.run_id!r} has domains {rec.mixture.domain_names}, "
                    f"dataset has {self.domain_names}"
                )

    @property
    def k(self) -> int:
        return len(self.domain_names)

    def __len__(self) -> int:
        return len(self.records)

    def targets(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for rec in self.records:
            seen.setdefault(rec.target, None)
        return tuple(seen)

    def for_target(self, target: str) -> tuple[RunRecord, ...]:
        return tuple(r for r in self.records if r.target == target)

    def arrays_for_target(
        self, target: str
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(N, D, H, L) arrays for all records with the given target.

        H has one mixture per row, columns ordered by `domain_names`.
        """
        recs = self.for_target(target)
        n = np.array([r.model_params for r in recs], dtype=float)
        d = np.array([r.tokens for r in recs], dtype=float)
        h = np.array([r.mixture.weights for r in recs], dtype=float).reshape(
            len(recs), self.k
        )
        loss = np.array([r.loss for r in recs], dtype=float)
        return n, d, h, loss


@dataclass(frozen=True)
class TargetWeights:
    """Nonnegative importance weights over target domains, normalized to sum 1."""

    targets: tuple[str, ...]
    weights: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        ws = self.weights if self.weights else tuple(1.0 for _ in self.targets)
        ws = tuple(float(w) for w in ws)
        if len(ws) != len(self.targets):
            raise InvalidMixture(
                f"{len(ws)} weights for {len(self.targets)} targets"
            )
        if len(set(self.targets)) != len(self.targets):
            raise InvalidMixture(f"duplicate targets: {self.targets}")
        if any(w < 0 or not np.isfinite(w) for w in ws):
            raise InvalidMixture("target weights must be finite and >= 0")
        total = sum(ws)
        if total <= 0:
            raise InvalidMixture("at least one target weight must be positive")
        object.__setattr__(self, "weights", tuple(w / total for w in ws))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "TargetWeights":
        return cls(tuple(mapping), tuple(mapping.values()))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.targets, self.weights))

    def as_mixture(self, domain_names: Iterable[str] | None = None) -> MixtureVector:
        """View these weights as a point on the simplex over `domain_names`.

        Only meaningful when targets coincide with training domains, e.g. in
        fixed-point scans of the target->optimal-mixture map.
        """
        names = tuple(domain_names) if domain_names is not None else self.targets
        if set(names) != set(self.targets):
            raise DomainMismatch(
                f"target set {self.targets} does not match domains {names}"
            )
        lookup = self.as_dict()
        return validate_mixture([lookup[n] for n in names], names)


def flops(model_params: int, tokens: int) -> float:
    """Training compute estimate: 6 * N * D."""
    if model_params <= 0 or tokens <= 0:
        raise ValueError("model_params and tokens must be positive")
    return 6.0 * float(model_params) * float(tokens)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL divergence in nats with the 0*log(0/x) = 0 convention."""
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_distance(a: MixtureVector, b: MixtureVector) -> float:
    """Jensen-Shannon distance sqrt(0.5*(KL(a||m) + KL(b||m))), m = (a+b)/2.

    Natural-log based; symmetric; 0 iff a == b; at most sqrt(ln 2), attained
    only for disjoint supports.  Whenever a component of a or b is positive
    the midpoint component is positive too, so no division by zero occurs.
    """
    if a.domain_names != b.domain_names:
        raise DomainMismatch(
            f"domain mismatch: {a.domain_names} vs {b.domain_names}"
        )
    pa, pb = a.as_array(), b.as_array()
    m = 0.5 * (pa + pb)
    js_div = 0.5 * (_kl(pa, m) + _kl(pb, m))
    return float(np.sqrt(max(js_div, 0.0)))
