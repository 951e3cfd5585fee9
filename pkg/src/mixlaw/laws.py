"""Closed-form scaling laws over (N, D, h) with analytic gradients.

Twelve law families are registered, keyed by tag:

    chinchilla          E + A/N^alpha + B/D^beta                    (5 params)
    additive            chinchilla + 1/(sum_i C_i h_i^gamma_i)      (5 + 2k)
    joint               additive with A^h = (sum C_A_i h_i)^gamma_A
                        and B^h = (sum C_B_i h_i)^gamma_B           (5 + 4k)
    full                joint with alpha^h, beta^h modeled the
                        same way as A^h, B^h                        (5 + 6k)
    simple              E + (sum C_i h_i)^gamma + A/D^alpha
                        + B/N^beta                                  (6 + k)
    ye-m1               E + sum_i C_i exp(gamma_i h_i)              (1 + 2k)
    ye-m2               E + C sum_i exp(gamma_i h_i)                (2 + k)
    ye-m3               E + C exp(prod_i gamma_i h_i)               (2 + k)
    ye-m4               E + C exp(sum_i gamma_i h_i)                (2 + k)
    ge                  (B/D^beta + E) * C / h_i^gamma, one fixed
                        training domain i                           (5)
    additive-fixed-nd   additive with the N and D terms dropped     (1 + 2k)
    additive-fixed-n    additive with the N term dropped            (3 + 2k)

Each family supports three views:

* natural parameters: the frozen dataclasses below;
* batch prediction and the Jacobian d(loss)/d(params) over arrays of runs;
* an unconstrained internal vector z used by the fitting code.  Positive
  parameters are stored as logarithms, range-constrained exponents through a
  sigmoid onto (0, 5), sign-free parameters raw.  ``pack_params`` /
  ``unpack_params`` convert between the two and ``grad_params`` returns
  gradients in internal coordinates.

Gradients are hand-derived closed forms; the test-suite checks every one
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .core import MixtureVector
from .errors import BoundaryGradient, DegenerateMixtureTerm, DomainMismatch

EXPONENT_CAP = 5.0  # upper bound for range-constrained exponents
GE_MIN_WEIGHT = 1e-6  # the ge law is singular at h_i = 0
_EXP_CLIP = 300.0  # keeps exp() and log-space powers finite
_DENOM_FLOOR = 1e-150  # guards reciprocals in the fitting path
_POS_FLOOR = 1e-300  # smallest value a log-parameterized quantity can take


# ---------------------------------------------------------------------------
# Natural-parameter containers
# ---------------------------------------------------------------------------

def _tup(x) -> tuple[float, ...]:
    if np.isscalar(x):
        return (float(x),)
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class ChinchillaParams:
    """E + A/N^alpha + B/D^beta."""

    E: float
    A: float
    B: float
    alpha: float
    beta: float


@dataclass(frozen=True)
class AdditiveParams:
    """E + 1/(sum_i C_i h_i^gamma_i) + A/N^alpha + B/D^beta."""

    E: float
    A: float
    B: float
    alpha: float
    beta: float
    C: tuple[float, ...]
    gamma: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "C", _tup(self.C))
        object.__setattr__(self, "gamma", _tup(self.gamma))


@dataclass(frozen=True)
class JointParams:
    """Additive form whose N and D coefficients depend on the mixture:
    A^h = (sum_i C_A_i h_i)^gamma_A, B^h = (sum_i C_B_i h_i)^gamma_B.
    """

    E: float
    alpha: float
    beta: float
    C: tuple[float, ...]
    gamma: tuple[float, ...]
    C_A: tuple[float, ...]
    gamma_A: float
    C_B: tuple[float, ...]
    gamma_B: float

    def __post_init__(self):
        for name in ("C", "gamma", "C_A", "C_B"):
            object.__setattr__(self, name, _tup(getattr(self, name)))


@dataclass(frozen=True)
class SimpleParams:
    """E + (sum_i C_i h_i)^gamma + A/D^alpha + B/N^beta.

    Note the pairing: A goes with D and B with N in this family, and gamma
    may take any sign.
    """

    E: float
    A: float
    B: float
    alpha: float
    beta: float
    C: tuple[float, ...]
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "C", _tup(self.C))


@dataclass(frozen=True)
class FullParams:
    """Joint form with the exponents also mixture-dependent:
    alpha^h = (sum_i C_alpha_i h_i)^gamma_alpha and likewise beta^h.
    """

    E: float
    C: tuple[float, ...]
    gamma: tuple[float, ...]
    C_A: tuple[float, ...]
    gamma_A: float
    C_B: tuple[float, ...]
    gamma_B: float
    C_alpha: tuple[float, ...]
    gamma_alpha: float
    C_beta: tuple[float, ...]
    gamma_beta: float

    def __post_init__(self):
        for name in ("C", "gamma", "C_A", "C_B", "C_alpha", "C_beta"):
            object.__setattr__(self, name, _tup(getattr(self, name)))


YE_VARIANTS = ("m1", "m2", "m3", "m4")


@dataclass(frozen=True)
class YeParams:
    """Mixture-only laws (no N or D dependence), four variants:

    m1: E + sum_i C_i exp(gamma_i h_i)     C is a k-vector
    m2: E + C sum_i exp(gamma_i h_i)       C is a scalar
    m3: E + C exp(prod_i gamma_i h_i)      C is a scalar
    m4: E + C exp(sum_i gamma_i h_i)       C is a scalar
    """

    variant: str
    E: float
    C: tuple[float, ...] | float
    gamma: tuple[float, ...]

    def __post_init__(self):
        if self.variant not in YE_VARIANTS:
            raise ValueError(f"unknown ye variant {self.variant!r}")
        object.__setattr__(self, "gamma", _tup(self.gamma))
        if self.variant == "m1":
            object.__setattr__(self, "C", _tup(self.C))
        else:
            c = self.C
            if not np.isscalar(c):
                (c,) = c
            object.__setattr__(self, "C", float(c))


@dataclass(frozen=True)
class GeParams:
    """(B/D^beta + E) * C / h_i^gamma for the training domain `domain_index`."""

    B: float
    E: float
    C: float
    beta: float
    gamma: float
    domain_index: int


NaturalParams = (
    ChinchillaParams
    | AdditiveParams
    | JointParams
    | SimpleParams
    | FullParams
    | YeParams
    | GeParams
)


# ---------------------------------------------------------------------------
# Numerics helpers
# ---------------------------------------------------------------------------

def _bexp(x):
    """exp with the argument capped so the result stays finite."""
    return np.exp(np.minimum(x, _EXP_CLIP))


def _pow0(u, g: float):
    """Elementwise u**g for u >= 0 with 0**g = 0 (g > 0) and 0**0 = 1."""
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    pos = u > 0.0
    if np.any(pos):
        out[pos] = _bexp(g * np.log(u[pos]))
    if g == 0.0:
        out[~pos] = 1.0
    return out


def _safe_log(u):
    """log(u) with 0 mapped to 0; callers mask the zero entries themselves."""
    u = np.asarray(u, dtype=float)
    return np.log(np.where(u > 0.0, u, 1.0))


def _prod_except(factors: np.ndarray) -> np.ndarray:
    """For F of shape (p, k), column i of the result is prod_{j != i} F_j."""
    p, k = factors.shape
    out = np.empty((p, k))
    for i in range(k):
        others = [j for j in range(k) if j != i]
        out[:, i] = np.prod(factors[:, others], axis=1) if others else 1.0
    return out


def _mixture_denominator(C, gamma, H):
    """S = sum_i C_i h_i^gamma_i and the matrix of powers h_i^gamma_i."""
    C = np.asarray(C, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    hpow = np.power(H, gamma[np.newaxis, :])
    s = hpow @ C
    return s, hpow


# ---------------------------------------------------------------------------
# Batch prediction: N, D arrays of shape (p,), H of shape (p, k) -> (p,)
# ---------------------------------------------------------------------------

def _predict_chinchilla(p: ChinchillaParams, N, D, H):
    return p.E + p.A * N ** (-p.alpha) + p.B * D ** (-p.beta)


def _predict_additive(p: AdditiveParams, N, D, H):
    s, _ = _mixture_denominator(p.C, p.gamma, H)
    return (
        p.E
        + 1.0 / np.maximum(s, _DENOM_FLOOR)
        + p.A * N ** (-p.alpha)
        + p.B * D ** (-p.beta)
    )


def _predict_joint(p: JointParams, N, D, H):
    s, _ = _mixture_denominator(p.C, p.gamma, H)
    ua = H @ np.asarray(p.C_A, dtype=float)
    ub = H @ np.asarray(p.C_B, dtype=float)
    ah = _pow0(ua, p.gamma_A)
    bh = _pow0(ub, p.gamma_B)
    return (
        p.E
        + 1.0 / np.maximum(s, _DENOM_FLOOR)
        + ah * N ** (-p.alpha)
        + bh * D ** (-p.beta)
    )


def _predict_full(p: FullParams, N, D, H):
    s, _ = _mixture_denominator(p.C, p.gamma, H)
    ua = H @ np.asarray(p.C_A, dtype=float)
    ub = H @ np.asarray(p.C_B, dtype=float)
    ah = _pow0(ua, p.gamma_A)
    bh = _pow0(ub, p.gamma_B)
    alpha_h = _pow0(H @ np.asarray(p.C_alpha, dtype=float), p.gamma_alpha)
    beta_h = _pow0(H @ np.asarray(p.C_beta, dtype=float), p.gamma_beta)
    return (
        p.E
        + 1.0 / np.maximum(s, _DENOM_FLOOR)
        + ah * np.exp(-alpha_h * np.log(N))
        + bh * np.exp(-beta_h * np.log(D))
    )


def _predict_simple(p: SimpleParams, N, D, H):
    u = H @ np.asarray(p.C, dtype=float)
    if p.gamma < 0.0:
        mix = _bexp(p.gamma * np.log(np.maximum(u, _DENOM_FLOOR)))
    else:
        mix = _pow0(u, p.gamma)
    return p.E + mix + p.A * D ** (-p.alpha) + p.B * N ** (-p.beta)


def _predict_ye(p: YeParams, N, D, H):
    gamma = np.asarray(p.gamma, dtype=float)
    if p.variant == "m1":
        terms = np.asarray(p.C, dtype=float) * _bexp(H * gamma[np.newaxis, :])
        return p.E + terms.sum(axis=1)
    if p.variant == "m2":
        return p.E + p.C * _bexp(H * gamma[np.newaxis, :]).sum(axis=1)
    if p.variant == "m3":
        return p.E + p.C * _bexp(np.prod(H * gamma[np.newaxis, :], axis=1))
    return p.E + p.C * _bexp(H @ gamma)


def _predict_ge(p: GeParams, N, D, H):
    hi = np.maximum(H[:, p.domain_index], _DENOM_FLOOR)
    return (p.B * D ** (-p.beta) + p.E) * p.C * _bexp(-p.gamma * np.log(hi))


# ---------------------------------------------------------------------------
# Natural-parameter Jacobians, columns in the family's layout order
# ---------------------------------------------------------------------------

def _jac_chinchilla(p: ChinchillaParams, N, D, H):
    ta = p.A * N ** (-p.alpha)
    tb = p.B * D ** (-p.beta)
    return np.column_stack(
        [
            np.ones(len(N)),
            N ** (-p.alpha),
            D ** (-p.beta),
            -ta * np.log(N),
            -tb * np.log(D),
        ]
    )


def _mixture_jac_blocks(C, gamma, H):
    """d(1/S)/dC_i and d(1/S)/dgamma_i blocks, each of shape (p, k)."""
    C = np.asarray(C, dtype=float)
    s, hpow = _mixture_denominator(C, gamma, H)
    inv2 = np.maximum(s, _DENOM_FLOOR) ** (-2.0)
    log_h = np.where(H > 0.0, _safe_log(H), 0.0)
    d_c = -hpow * inv2[:, np.newaxis]
    d_gamma = (C[np.newaxis, :] * hpow * log_h) * -inv2[:, np.newaxis]
    return d_c, d_gamma


def _jac_additive(p: AdditiveParams, N, D, H):
    d_c, d_gamma = _mixture_jac_blocks(p.C, p.gamma, H)
    ta = p.A * N ** (-p.alpha)
    tb = p.B * D ** (-p.beta)
    head = np.column_stack(
        [
            np.ones(len(N)),
            N ** (-p.alpha),
            D ** (-p.beta),
            -ta * np.log(N),
            -tb * np.log(D),
        ]
    )
    return np.hstack([head, d_c, d_gamma])


def _jac_additive_fixed_nd(p: AdditiveParams, N, D, H):
    d_c, d_gamma = _mixture_jac_blocks(p.C, p.gamma, H)
    return np.hstack([np.ones((len(H), 1)), d_c, d_gamma])


def _jac_additive_fixed_n(p: AdditiveParams, N, D, H):
    d_c, d_gamma = _mixture_jac_blocks(p.C, p.gamma, H)
    tb = p.B * D ** (-p.beta)
    head = np.column_stack([np.ones(len(D)), D ** (-p.beta), -tb * np.log(D)])
    return np.hstack([head, d_c, d_gamma])


def _linear_power_blocks(coeffs, g: float, H, outer):
    """Jacobian blocks of T = outer * (H @ coeffs)**g w.r.t. coeffs and g.

    Returns (d_coeffs of shape (p, k), d_g of shape (p,), T of shape (p,)).
    `outer` is the mixture-independent multiplier of the power term.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    u = H @ coeffs
    powed = _pow0(u, g)
    t = outer * powed
    pow_m1 = _pow0(u, g - 1.0) if g != 1.0 else np.ones(len(u))
    d_coeffs = (g * outer * pow_m1)[:, np.newaxis] * H
    d_g = np.where(u > 0.0, t * _safe_log(u), 0.0)
    return d_coeffs, d_g, t


def _jac_joint(p: JointParams, N, D, H):
    d_c, d_gamma = _mixture_jac_blocks(p.C, p.gamma, H)
    na = N ** (-p.alpha)
    db = D ** (-p.beta)
    d_ca, d_ga, ta = _linear_power_blocks(p.C_A, p.gamma_A, H, na)
    d_cb, d_gb, tb = _linear_power_blocks(p.C_B, p.gamma_B, H, db)
    head = np.column_stack(
        [np.ones(len(N)), -ta * np.log(N), -tb * np.log(D)]
    )
    return np.hstack([head, d_c, d_gamma, d_ca, d_ga[:, np.newaxis], d_cb, d_gb[:, np.newaxis]])


def _jac_full(p: FullParams, N, D, H):
    d_c, d_gamma = _mixture_jac_blocks(p.C, p.gamma, H)
    log_n, log_d = np.log(N), np.log(D)
    alpha_h = _pow0(H @ np.asarray(p.C_alpha, dtype=float), p.gamma_alpha)
    beta_h = _pow0(H @ np.asarray(p.C_beta, dtype=float), p.gamma_beta)
    na = np.exp(-alpha_h * log_n)
    db = np.exp(-beta_h * log_d)
    d_ca, d_ga, ta = _linear_power_blocks(p.C_A, p.gamma_A, H, na)
    d_cb, d_gb, tb = _linear_power_blocks(p.C_B, p.gamma_B, H, db)
    # alpha^h enters through exp(-alpha^h log N): chain in -T_A log N.
    d_calpha, d_galpha, _ = _linear_power_blocks(
        p.C_alpha, p.gamma_alpha, H, -ta * log_n
    )
    d_cbeta, d_gbeta, _ = _linear_power_blocks(
        p.C_beta, p.gamma_beta, H, -tb * log_d
    )
    return np.hstack(
        [
            np.ones((len(H), 1)),
            d_c,
            d_gamma,
            d_ca,
            d_ga[:, np.newaxis],
            d_cb,
            d_gb[:, np.newaxis],
            d_calpha,
            d_galpha[:, np.newaxis],
            d_cbeta,
            d_gbeta[:, np.newaxis],
        ]
    )


def _jac_simple(p: SimpleParams, N, D, H):
    u = H @ np.asarray(p.C, dtype=float)
    uf = np.maximum(u, _DENOM_FLOOR)
    if p.gamma < 0.0:
        powed = _bexp(p.gamma * np.log(uf))
    else:
        powed = _pow0(u, p.gamma)
    pow_m1 = _bexp((p.gamma - 1.0) * np.log(uf))
    ta = p.A * D ** (-p.alpha)
    tb = p.B * N ** (-p.beta)
    head = np.column_stack(
        [
            np.ones(len(N)),
            D ** (-p.alpha),
            N ** (-p.beta),
            -ta * np.log(D),
            -tb * np.log(N),
        ]
    )
    d_c = (p.gamma * pow_m1)[:, np.newaxis] * H
    d_g = powed * np.log(uf)
    return np.hstack([head, d_c, d_g[:, np.newaxis]])


def _jac_ye(p: YeParams, N, D, H):
    ones = np.ones((len(H), 1))
    gamma = np.asarray(p.gamma, dtype=float)
    if p.variant == "m1":
        expo = _bexp(H * gamma[np.newaxis, :])
        d_gamma = np.asarray(p.C, dtype=float)[np.newaxis, :] * H * expo
        return np.hstack([ones, expo, d_gamma])
    expo = _bexp(H * gamma[np.newaxis, :])
    if p.variant == "m2":
        d_c = expo.sum(axis=1)
        d_gamma = p.C * H * expo
        return np.hstack([ones, d_c[:, np.newaxis], d_gamma])
    if p.variant == "m3":
        factors = H * gamma[np.newaxis, :]
        core = _bexp(np.prod(factors, axis=1))
        d_c = core
        d_gamma = (p.C * core)[:, np.newaxis] * H * _prod_except(factors)
        return np.hstack([ones, d_c[:, np.newaxis], d_gamma])
    core = _bexp(H @ gamma)
    d_gamma = (p.C * core)[:, np.newaxis] * H
    return np.hstack([ones, core[:, np.newaxis], d_gamma])


def _jac_ge(p: GeParams, N, D, H):
    hi = np.maximum(H[:, p.domain_index], _DENOM_FLOOR)
    log_hi = np.log(hi)
    mix = p.C * _bexp(-p.gamma * log_hi)
    dpow = D ** (-p.beta)
    t = p.B * dpow + p.E
    return np.column_stack(
        [
            dpow * mix,  # B
            mix,  # E
            t * _bexp(-p.gamma * log_hi),  # C
            -p.B * dpow * np.log(D) * mix,  # beta
            -t * mix * log_hi,  # gamma
        ]
    )


# ---------------------------------------------------------------------------
# Mixture gradients at a single point: d loss / d h_i, h as a free vector
# ---------------------------------------------------------------------------

def _mix_grad_reciprocal(C, gamma, h):
    C = np.asarray(C, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    s = float(np.power(h, gamma) @ C)
    inv2 = max(s, _DENOM_FLOOR) ** (-2.0)
    hpow_m1 = np.array(
        [
            hv ** (gv - 1.0) if (hv > 0.0 or gv >= 1.0) else 0.0
            for hv, gv in zip(h, gamma)
        ]
    )
    return -C * gamma * hpow_m1 * inv2


def _grad_h_zero(p, N, D, h):
    return np.zeros(len(h))


def _grad_h_additive(p: AdditiveParams, N, D, h):
    return _mix_grad_reciprocal(p.C, p.gamma, h)


def _linear_power_grad(coeffs, g: float, h, outer: float):
    coeffs = np.asarray(coeffs, dtype=float)
    u = float(h @ coeffs)
    if u <= 0.0:
        pow_m1 = 0.0 if g > 1.0 else (1.0 if g == 1.0 else np.inf)
    else:
        pow_m1 = u ** (g - 1.0)
    return outer * g * pow_m1 * coeffs


def _grad_h_joint(p: JointParams, N, D, h):
    g = _mix_grad_reciprocal(p.C, p.gamma, h)
    g = g + _linear_power_grad(p.C_A, p.gamma_A, h, float(N) ** (-p.alpha))
    g = g + _linear_power_grad(p.C_B, p.gamma_B, h, float(D) ** (-p.beta))
    return g


def _grad_h_full(p: FullParams, N, D, h):
    log_n, log_d = np.log(float(N)), np.log(float(D))
    alpha_h = float(_pow0(h @ np.asarray(p.C_alpha, dtype=float), p.gamma_alpha))
    beta_h = float(_pow0(h @ np.asarray(p.C_beta, dtype=float), p.gamma_beta))
    na = np.exp(-alpha_h * log_n)
    db = np.exp(-beta_h * log_d)
    ah = float(_pow0(h @ np.asarray(p.C_A, dtype=float), p.gamma_A))
    bh = float(_pow0(h @ np.asarray(p.C_B, dtype=float), p.gamma_B))
    g = _mix_grad_reciprocal(p.C, p.gamma, h)
    g = g + _linear_power_grad(p.C_A, p.gamma_A, h, na)
    g = g + _linear_power_grad(p.C_alpha, p.gamma_alpha, h, -ah * na * log_n)
    g = g + _linear_power_grad(p.C_B, p.gamma_B, h, db)
    g = g + _linear_power_grad(p.C_beta, p.gamma_beta, h, -bh * db * log_d)
    return g


def _grad_h_simple(p: SimpleParams, N, D, h):
    return _linear_power_grad(p.C, p.gamma, h, 1.0)


def _grad_h_ye(p: YeParams, N, D, h):
    gamma = np.asarray(p.gamma, dtype=float)
    if p.variant == "m1":
        return np.asarray(p.C, dtype=float) * gamma * _bexp(gamma * h)
    if p.variant == "m2":
        return p.C * gamma * _bexp(gamma * h)
    if p.variant == "m3":
        factors = (gamma * h)[np.newaxis, :]
        core = p.C * _bexp(np.prod(factors))
        return core * gamma * _prod_except(factors)[0]
    return p.C * _bexp(float(gamma @ h)) * gamma


def _grad_h_ge(p: GeParams, N, D, h):
    g = np.zeros(len(h))
    hi = h[p.domain_index]
    t = p.B * float(D) ** (-p.beta) + p.E
    g[p.domain_index] = -p.gamma * t * p.C * hi ** (-p.gamma - 1.0)
    return g


# ---------------------------------------------------------------------------
# Family registry: layouts, internal parameterization, dispatch
# ---------------------------------------------------------------------------

Block = tuple[str, str, int]  # (field name, transform kind, entry count)


def _layout_chinchilla(k: int) -> tuple[Block, ...]:
    return (("E", "log", 1), ("A", "log", 1), ("B", "log", 1),
            ("alpha", "sig", 1), ("beta", "sig", 1))


def _layout_additive(k: int) -> tuple[Block, ...]:
    return _layout_chinchilla(k) + (("C", "log", k), ("gamma", "sig", k))


def _layout_additive_fixed_nd(k: int) -> tuple[Block, ...]:
    return (("E", "log", 1), ("C", "log", k), ("gamma", "sig", k))


def _layout_additive_fixed_n(k: int) -> tuple[Block, ...]:
    return (("E", "log", 1), ("B", "log", 1), ("beta", "sig", 1),
            ("C", "log", k), ("gamma", "sig", k))


def _layout_joint(k: int) -> tuple[Block, ...]:
    return (("E", "log", 1), ("alpha", "sig", 1), ("beta", "sig", 1),
            ("C", "log", k), ("gamma", "sig", k),
            ("C_A", "log", k), ("gamma_A", "sig", 1),
            ("C_B", "log", k), ("gamma_B", "sig", 1))


def _layout_full(k: int) -> tuple[Block, ...]:
    return (("E", "log", 1),
            ("C", "log", k), ("gamma", "sig", k),
            ("C_A", "log", k), ("gamma_A", "sig", 1),
            ("C_B", "log", k), ("gamma_B", "sig", 1),
            ("C_alpha", "log", k), ("gamma_alpha", "sig", 1),
            ("C_beta", "log", k), ("gamma_beta", "sig", 1))


def _layout_simple(k: int) -> tuple[Block, ...]:
    return _layout_chinchilla(k) + (("C", "log", k), ("gamma", "raw", 1))


def _layout_ye_m1(k: int) -> tuple[Block, ...]:
    return (("E", "raw", 1), ("C", "log", k), ("gamma", "raw", k))


def _layout_ye_scalar(k: int) -> tuple[Block, ...]:
    return (("E", "raw", 1), ("C", "log", 1), ("gamma", "raw", k))


def _layout_ge(k: int) -> tuple[Block, ...]:
    return (("B", "log", 1), ("E", "log", 1), ("C", "log", 1),
            ("beta", "sig", 1), ("gamma", "sig", 1))


def _make_chinchilla(fields, k, context):
    return ChinchillaParams(**fields)


def _make_additive(fields, k, context):
    return AdditiveParams(**fields)


def _make_additive_fixed_nd(fields, k, context):
    return AdditiveParams(A=0.0, B=0.0, alpha=1.0, beta=1.0, **fields)


def _make_additive_fixed_n(fields, k, context):
    return AdditiveParams(A=0.0, alpha=1.0, **fields)


def _make_joint(fields, k, context):
    return JointParams(**fields)


def _make_full(fields, k, context):
    return FullParams(**fields)


def _make_simple(fields, k, context):
    return SimpleParams(**fields)


def _make_ye(variant):
    def make(fields, k, context):
        return YeParams(variant=variant, **fields)

    return make


def _make_ge(fields, k, context):
    idx = (context or {}).get("domain_index")
    if idx is None:
        raise ValueError("the ge family needs a domain_index in its context")
    return GeParams(domain_index=int(idx), **fields)


@dataclass(frozen=True)
class LawFamily:
    """Closed-form loss family: natural container plus evaluation kernels."""

    tag: str
    params_cls: type
    layout: Callable[[int], tuple[Block, ...]]
    make: Callable
    predict: Callable
    jac: Callable
    grad_h: Callable
    uses_budget: bool = True  # False for mixture-only laws (ye)

    def dim(self, k: int) -> int:
        return sum(size for _, _, size in self.layout(k))


FAMILIES: dict[str, LawFamily] = {
    f.tag: f
    for f in (
        LawFamily("chinchilla", ChinchillaParams, _layout_chinchilla,
                  _make_chinchilla, _predict_chinchilla, _jac_chinchilla,
                  _grad_h_zero),
        LawFamily("additive", AdditiveParams, _layout_additive,
                  _make_additive, _predict_additive, _jac_additive,
                  _grad_h_additive),
        LawFamily("additive-fixed-nd", AdditiveParams, _layout_additive_fixed_nd,
                  _make_additive_fixed_nd, _predict_additive,
                  _jac_additive_fixed_nd, _grad_h_additive),
        LawFamily("additive-fixed-n", AdditiveParams, _layout_additive_fixed_n,
                  _make_additive_fixed_n, _predict_additive,
                  _jac_additive_fixed_n, _grad_h_additive),
        LawFamily("joint", JointParams, _layout_joint, _make_joint,
                  _predict_joint, _jac_joint, _grad_h_joint),
        LawFamily("full", FullParams, _layout_full, _make_full,
                  _predict_full, _jac_full, _grad_h_full),
        LawFamily("simple", SimpleParams, _layout_simple, _make_simple,
                  _predict_simple, _jac_simple, _grad_h_simple),
        LawFamily("ye-m1", YeParams, _layout_ye_m1, _make_ye("m1"),
                  _predict_ye, _jac_ye, _grad_h_ye, uses_budget=False),
        LawFamily("ye-m2", YeParams, _layout_ye_scalar, _make_ye("m2"),
                  _predict_ye, _jac_ye, _grad_h_ye, uses_budget=False),
        LawFamily("ye-m3", YeParams, _layout_ye_scalar, _make_ye("m3"),
                  _predict_ye, _jac_ye, _grad_h_ye, uses_budget=False),
        LawFamily("ye-m4", YeParams, _layout_ye_scalar, _make_ye("m4"),
                  _predict_ye, _jac_ye, _grad_h_ye, uses_budget=False),
        LawFamily("ge", GeParams, _layout_ge, _make_ge, _predict_ge,
                  _jac_ge, _grad_h_ge),
    )
}

FAMILY_TAGS = tuple(FAMILIES)


def get_family(tag: str) -> LawFamily:
    try:
        return FAMILIES[tag]
    except KeyError:
        raise ValueError(
            f"unknown law family {tag!r}; known: {', '.join(FAMILY_TAGS)}"
        ) from None


def law_dim(tag: str, k: int) -> int:
    """Length of the internal parameter vector for a family at k domains."""
    return get_family(tag).dim(k)


# ---------------------------------------------------------------------------
# Tagged wrapper with validation
# ---------------------------------------------------------------------------

def _require(cond: bool, message: str):
    if not cond:
        raise ValueError(message)


def _validate_family(tag: str, p: NaturalParams, k: int):
    def all_len(*names):
        for name in names:
            _require(len(getattr(p, name)) == k,
                     f"{tag}: {name} must have length {k}")

    def all_pos(*names):
        for name in names:
            vals = np.atleast_1d(np.asarray(getattr(p, name), dtype=float))
            _require(bool(np.all(vals > 0.0)), f"{tag}: {name} must be > 0")

    def all_nonneg(*names):
        for name in names:
            vals = np.atleast_1d(np.asarray(getattr(p, name), dtype=float))
            _require(bool(np.all(vals >= 0.0)), f"{tag}: {name} must be >= 0")

    def exponents(*names):
        for name in names:
            vals = np.atleast_1d(np.asarray(getattr(p, name), dtype=float))
            _require(
                bool(np.all((vals > 0.0) & (vals <= EXPONENT_CAP))),
                f"{tag}: {name} must lie in (0, {EXPONENT_CAP}]",
            )

    if tag == "chinchilla":
        all_nonneg("E", "A", "B")
        exponents("alpha", "beta")
    elif tag in ("additive", "additive-fixed-nd", "additive-fixed-n"):
        all_len("C", "gamma")
        all_nonneg("E", "A", "B")
        all_pos("alpha", "beta", "C")
        exponents("gamma")
    elif tag == "joint":
        all_len("C", "gamma", "C_A", "C_B")
        all_nonneg("E", "C_A", "C_B")
        all_pos("alpha", "beta", "C", "gamma_A", "gamma_B")
        exponents("gamma")
    elif tag == "full":
        all_len("C", "gamma", "C_A", "C_B", "C_alpha", "C_beta")
        all_nonneg("E", "C_A", "C_B")
        all_pos("C", "C_alpha", "C_beta",
                "gamma_A", "gamma_B", "gamma_alpha", "gamma_beta")
        exponents("gamma")
    elif tag == "simple":
        all_len("C")
        all_nonneg("E", "A", "B")
        all_pos("alpha", "beta", "C")
        _require(np.isfinite(p.gamma), f"{tag}: gamma must be finite")
    elif tag.startswith("ye-"):
        _require(p.variant == tag.split("-")[1], f"{tag}: variant mismatch")
        _require(len(p.gamma) == k, f"{tag}: gamma must have length {k}")
        if p.variant == "m1":
            _require(len(p.C) == k, f"{tag}: C must have length {k}")
    elif tag == "ge":
        all_pos("B", "E", "C")
        exponents("beta", "gamma")
        _require(0 <= p.domain_index < k,
                 f"{tag}: domain_index {p.domain_index} outside [0, {k})")


@dataclass(frozen=True)
class LawParams:
    """A law family tag, its natural parameters, and the domain ordering."""

    family: str
    domain_names: tuple[str, ...]
    params: NaturalParams

    def __post_init__(self):
        object.__setattr__(self, "domain_names", tuple(self.domain_names))
        fam = get_family(self.family)
        if not isinstance(self.params, fam.params_cls):
            raise ValueError(
                f"family {self.family!r} expects {fam.params_cls.__name__}, "
                f"got {type(self.params).__name__}"
            )
        _validate_family(self.family, self.params, self.k)

    @property
    def k(self) -> int:
        return len(self.domain_names)

    def dim(self) -> int:
        return get_family(self.family).dim(self.k)


# ---------------------------------------------------------------------------
# Internal (unconstrained) parameterization
# ---------------------------------------------------------------------------

def _to_internal(values: np.ndarray, kind: str) -> np.ndarray:
    if kind == "log":
        return np.log(np.maximum(values, _POS_FLOOR))
    if kind == "sig":
        v = np.clip(values / EXPONENT_CAP, 1e-15, 1.0 - 1e-15)
        return np.log(v / (1.0 - v))
    return np.asarray(values, dtype=float)


def _from_internal(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "log":
        return np.maximum(_bexp(z), _POS_FLOOR)
    if kind == "sig":
        # expit saturates to exactly 0.0 around z < -745; keep the exponent
        # strictly positive so it always satisfies its (0, cap] invariant.
        return np.maximum(EXPONENT_CAP * expit(np.asarray(z, dtype=float)),
                          _POS_FLOOR)
    return np.asarray(z, dtype=float)


def _dnatural_dz(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "log":
        return np.where(z < _EXP_CLIP, np.maximum(_bexp(z), _POS_FLOOR), 0.0)
    if kind == "sig":
        s = expit(np.asarray(z, dtype=float))
        return EXPONENT_CAP * s * (1.0 - s)
    return np.ones_like(np.asarray(z, dtype=float))


def pack_params(law: LawParams) -> np.ndarray:
    """Natural parameters -> unconstrained internal vector."""
    fam = get_family(law.family)
    parts = []
    for name, kind, size in fam.layout(law.k):
        vals = np.atleast_1d(np.asarray(getattr(law.params, name), dtype=float))
        if len(vals) != size:
            raise ValueError(f"{law.family}: field {name} has length "
                             f"{len(vals)}, expected {size}")
        parts.append(_to_internal(vals, kind))
    return np.concatenate(parts)


def unpack_natural(tag: str, z: np.ndarray, k: int,
                   context: dict | None = None) -> NaturalParams:
    """Internal vector -> natural parameter dataclass (no range validation)."""
    fam = get_family(tag)
    z = np.asarray(z, dtype=float)
    if len(z) != fam.dim(k):
        raise ValueError(
            f"{tag}: internal vector has length {len(z)}, expected {fam.dim(k)}"
        )
    fields = {}
    pos = 0
    for name, kind, size in fam.layout(k):
        vals = _from_internal(z[pos:pos + size], kind)
        fields[name] = float(vals[0]) if size == 1 else tuple(vals)
        pos += size
    return fam.make(fields, k, context)


def unpack_params(tag: str, z: np.ndarray, domain_names: Sequence[str],
                  context: dict | None = None) -> LawParams:
    """Internal vector -> validated LawParams."""
    names = tuple(domain_names)
    return LawParams(tag, names, unpack_natural(tag, z, len(names), context))


def internal_chain(tag: str, z: np.ndarray, k: int) -> np.ndarray:
    """d(natural)/d(internal) along the layout, as a diagonal vector."""
    fam = get_family(tag)
    z = np.asarray(z, dtype=float)
    parts = []
    pos = 0
    for _, kind, size in fam.layout(k):
        parts.append(_dnatural_dz(z[pos:pos + size], kind))
        pos += size
    return np.concatenate(parts)


def internal_kinds(tag: str, k: int) -> tuple[tuple[str, str], ...]:
    """(field name, transform kind) for every internal coordinate, in order."""
    out = []
    for name, kind, size in get_family(tag).layout(k):
        out.extend([(name, kind)] * size)
    return tuple(out)


# ---------------------------------------------------------------------------
# Batch evaluation used by the fitting code
# ---------------------------------------------------------------------------

def predict_batch(tag: str, params: NaturalParams, N, D, H) -> np.ndarray:
    """Predicted losses for arrays of runs; overflow-guarded, never raises."""
    fam = get_family(tag)
    return np.asarray(
        fam.predict(params, np.asarray(N, float), np.asarray(D, float),
                    np.asarray(H, float)),
        dtype=float,
    )


def jac_batch(tag: str, params: NaturalParams, N, D, H) -> np.ndarray:
    """(p, dim) Jacobian of the predictions w.r.t. natural parameters."""
    fam = get_family(tag)
    return fam.jac(params, np.asarray(N, float), np.asarray(D, float),
                   np.asarray(H, float))


# ---------------------------------------------------------------------------
# Spec-level single-point operations
# ---------------------------------------------------------------------------

def _as_h_array(p: NaturalParams, h: MixtureVector, k_fields: Sequence[str]):
    arr = h.as_array()
    for name in k_fields:
        vals = getattr(p, name)
        if isinstance(vals, tuple) and len(vals) != h.k:
            raise DomainMismatch(
                f"law has {len(vals)} domains in {name}, mixture has {h.k}"
            )
    return arr


def eval_chinchilla(p: ChinchillaParams, N: int, D: int) -> float:
    """E + A/N^alpha + B/D^beta."""
    return float(p.E + p.A * float(N) ** (-p.alpha) + p.B * float(D) ** (-p.beta))


def eval_additive(p: AdditiveParams, N: int, D: int, h: MixtureVector) -> float:
    """E + 1/(sum_i C_i h_i^gamma_i) + A/N^alpha + B/D^beta."""
    arr = _as_h_array(p, h, ("C", "gamma"))
    s, _ = _mixture_denominator(p.C, p.gamma, arr[np.newaxis, :])
    if s[0] <= 0.0:
        raise DegenerateMixtureTerm(
            f"mixture denominator sum is {s[0]}, must be positive"
        )
    return float(_predict_additive(p, np.array([float(N)]),
                                   np.array([float(D)]), arr[np.newaxis, :])[0])


def eval_joint(p: JointParams, N: int, D: int, h: MixtureVector) -> float:
    """Joint law value; the N and D coefficients depend on the mixture."""
    arr = _as_h_array(p, h, ("C", "gamma", "C_A", "C_B"))
    s, _ = _mixture_denominator(p.C, p.gamma, arr[np.newaxis, :])
    if s[0] <= 0.0:
        raise DegenerateMixtureTerm(
            f"mixture denominator sum is {s[0]}, must be positive"
        )
    for name in ("C_A", "C_B"):
        u = float(arr @ np.asarray(getattr(p, name), dtype=float))
        if u < 0.0:
            raise DegenerateMixtureTerm(f"sum over {name} is negative")
    return float(_predict_joint(p, np.array([float(N)]),
                                np.array([float(D)]), arr[np.newaxis, :])[0])


def eval_simple(p: SimpleParams, N: int, D: int, h: MixtureVector) -> float:
    """E + (sum_i C_i h_i)^gamma + A/D^alpha + B/N^beta."""
    arr = _as_h_array(p, h, ("C",))
    u = float(arr @ np.asarray(p.C, dtype=float))
    if u <= 0.0 and p.gamma < 0.0:
        raise DegenerateMixtureTerm(
            f"sum_i C_i h_i = {u} with negative gamma is singular"
        )
    return float(_predict_simple(p, np.array([float(N)]),
                                 np.array([float(D)]), arr[np.newaxis, :])[0])


def eval_full(p: FullParams, N: int, D: int, h: MixtureVector) -> float:
    """Full law value; coefficients and exponents depend on the mixture."""
    arr = _as_h_array(p, h, ("C", "gamma", "C_A", "C_B", "C_alpha", "C_beta"))
    s, _ = _mixture_denominator(p.C, p.gamma, arr[np.newaxis, :])
    if s[0] <= 0.0:
        raise DegenerateMixtureTerm(
            f"mixture denominator sum is {s[0]}, must be positive"
        )
    for name in ("C_alpha", "C_beta"):
        u = float(arr @ np.asarray(getattr(p, name), dtype=float))
        if u <= 0.0:
            raise DegenerateMixtureTerm(f"sum over {name} must be positive")
    return float(_predict_full(p, np.array([float(N)]),
                               np.array([float(D)]), arr[np.newaxis, :])[0])


def eval_ye(p: YeParams, h: MixtureVector) -> float:
    """Mixture-only law value at a fixed training budget."""
    arr = _as_h_array(p, h, ("gamma",))
    dummy = np.array([1.0])
    return float(_predict_ye(p, dummy, dummy, arr[np.newaxis, :])[0])


def eval_ge(p: GeParams, D: int, h: MixtureVector) -> float:
    """(B/D^beta + E) * C/h_i^gamma for the law's training domain."""
    arr = h.as_array()
    if p.domain_index >= h.k:
        raise DomainMismatch(
            f"domain_index {p.domain_index} outside mixture of size {h.k}"
        )
    if arr[p.domain_index] < GE_MIN_WEIGHT:
        raise DegenerateMixtureTerm(
            f"h[{p.domain_index}] = {arr[p.domain_index]} below the "
            f"{GE_MIN_WEIGHT} floor of the ge law"
        )
    return float(_predict_ge(p, np.array([1.0]), np.array([float(D)]),
                             arr[np.newaxis, :])[0])


def eval_law(law: LawParams, N: int, D: int, h: MixtureVector) -> float:
    """Evaluate any tagged law at a single (N, D, h) point."""
    if h.domain_names != law.domain_names:
        raise DomainMismatch(
            f"law domains {law.domain_names} != mixture domains {h.domain_names}"
        )
    p = law.params
    if law.family == "chinchilla":
        return eval_chinchilla(p, N, D)
    if law.family in ("additive", "additive-fixed-nd", "additive-fixed-n"):
        return eval_additive(p, N, D, h)
    if law.family == "joint":
        return eval_joint(p, N, D, h)
    if law.family == "full":
        return eval_full(p, N, D, h)
    if law.family == "simple":
        return eval_simple(p, N, D, h)
    if law.family.startswith("ye-"):
        return eval_ye(p, h)
    return eval_ge(p, D, h)


def grad_params(law: LawParams, N: int, D: int, h: MixtureVector) -> np.ndarray:
    """Gradient of the loss w.r.t. the internal parameter vector."""
    if h.domain_names != law.domain_names:
        raise DomainMismatch(
            f"law domains {law.domain_names} != mixture domains {h.domain_names}"
        )
    eval_law(law, N, D, h)  # surfaces DegenerateMixtureTerm before the jac
    jac = jac_batch(law.family, law.params, [float(N)], [float(D)],
                    h.as_array()[np.newaxis, :])
    chain = internal_chain(law.family, pack_params(law), law.k)
    return jac[0] * chain


def _check_boundary(law: LawParams, arr: np.ndarray):
    p = law.params
    if law.family in ("additive", "additive-fixed-nd", "additive-fixed-n",
                      "joint", "full"):
        gamma = np.asarray(p.gamma, dtype=float)
        bad = (arr == 0.0) & (gamma < 1.0)
        if np.any(bad):
            idx = int(np.argmax(bad))
            raise BoundaryGradient(
                f"h[{idx}] = 0 with gamma[{idx}] = {gamma[idx]} < 1: "
                "the mixture gradient is unbounded there"
            )
    if law.family in ("joint", "full"):
        for c_name, g_name in (("C_A", "gamma_A"), ("C_B", "gamma_B")) + (
            (("C_alpha", "gamma_alpha"), ("C_beta", "gamma_beta"))
            if law.family == "full" else ()
        ):
            coeffs = np.asarray(getattr(p, c_name), dtype=float)
            g = getattr(p, g_name)
            if float(arr @ coeffs) == 0.0 and g < 1.0 and np.any(coeffs > 0.0):
                raise BoundaryGradient(
                    f"sum over {c_name} vanishes with {g_name} = {g} < 1"
                )


def grad_mixture(law: LawParams, N: int, D: int, h: MixtureVector) -> np.ndarray:
    """Gradient of the loss w.r.t. the mixture weights, h as a free vector.

    The simplex constraint is the optimizer's business, not handled here.
    """
    if h.domain_names != law.domain_names:
        raise DomainMismatch(
            f"law domains {law.domain_names} != mixture domains {h.domain_names}"
        )
    arr = h.as_array()
    if law.family == "ge":
        if arr[law.params.domain_index] < GE_MIN_WEIGHT:
            raise DegenerateMixtureTerm(
                f"h[{law.params.domain_index}] below the ge floor"
            )
    else:
        _check_boundary(law, arr)
    fam = get_family(law.family)
    return np.asarray(fam.grad_h(law.params, float(N), float(D), arr),
                      dtype=float)


# ---------------------------------------------------------------------------
# Nesting embeddings and asymptotics
# ---------------------------------------------------------------------------

def embed_additive_in_joint(p: AdditiveParams) -> JointParams:
    """Additive law as a joint law: gamma_A = gamma_B = 1, C_A_i = A, C_B_i = B.

    eval_joint on the result equals eval_additive on the input for every
    (N, D, h) because sum_i A h_i = A on the simplex.
    """
    k = len(p.C)
    return JointParams(
        E=p.E, alpha=p.alpha, beta=p.beta, C=p.C, gamma=p.gamma,
        C_A=(p.A,) * k, gamma_A=1.0, C_B=(p.B,) * k, gamma_B=1.0,
    )


def embed_joint_in_full(p: JointParams) -> FullParams:
    """Joint law as a full law: constant exponents become linear forms that
    collapse to alpha and beta on the simplex."""
    k = len(p.C)
    return FullParams(
        E=p.E, C=p.C, gamma=p.gamma,
        C_A=p.C_A, gamma_A=p.gamma_A, C_B=p.C_B, gamma_B=p.gamma_B,
        C_alpha=(p.alpha,) * k, gamma_alpha=1.0,
        C_beta=(p.beta,) * k, gamma_beta=1.0,
    )


def asymptotic_loss(
    p: AdditiveParams | JointParams | FullParams, h: MixtureVector
) -> float:
    """The N -> inf, D -> inf limit: E + 1/(sum_i C_i h_i^gamma_i)."""
    if not isinstance(p, (AdditiveParams, JointParams, FullParams)):
        raise TypeError(f"no asymptotic form for {type(p).__name__}")
    arr = _as_h_array(p, h, ("C", "gamma"))
    s, _ = _mixture_denominator(p.C, p.gamma, arr[np.newaxis, :])
    if s[0] <= 0.0:
        raise DegenerateMixtureTerm(
            f"mixture denominator sum is {s[0]}, must be positive"
        )
    return float(p.E + 1.0 / s[0])


def entropy_bound(p: AdditiveParams, domain_index: int) -> float:
    """E + 1/C_i: the infinite-budget loss when training purely on domain i,
    an upper bound on the target entropy when that domain is the target."""
    if not 0 <= domain_index < len(p.C):
        raise ValueError(f"domain_index {domain_index} outside [0, {len(p.C)})")
    return float(p.E + 1.0 / p.C[domain_index])
