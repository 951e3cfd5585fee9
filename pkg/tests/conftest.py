"""Shared fixtures: small synthetic datasets and ground-truth laws."""

import numpy as np
import pytest

from mixlaw.core import validate_mixture
from mixlaw.laws import AdditiveParams, JointParams, LawParams
from mixlaw.synthlab import (
    DesignSpec,
    NoiseModel,
    even_spacing,
    sample_mixtures,
    simplex_grid,
    synth_runs,
)

DOMAINS3 = ("web", "code", "books")


def additive_truth(names=DOMAINS3) -> LawParams:
    k = len(names)
    c = (1.2, 2.0, 0.6, 0.9, 1.6, 0.7, 1.1, 1.4)[:k]
    g = (0.4, 0.7, 0.5, 0.8, 0.45, 0.6, 0.55, 0.65)[:k]
    return LawParams(
        "additive", names,
        AdditiveParams(E=1.7, A=280.0, B=370.0, alpha=0.34, beta=0.28,
                       C=c, gamma=g),
    )


def joint_truth(names=DOMAINS3) -> LawParams:
    k = len(names)
    c = (1.2, 2.0, 0.6, 0.9, 1.6, 0.7, 1.1, 1.4)[:k]
    g = (0.4, 0.7, 0.5, 0.8, 0.45, 0.6, 0.55, 0.65)[:k]
    ca = (150.0, 420.0, 260.0, 330.0, 180.0, 510.0, 240.0, 390.0)[:k]
    cb = (520.0, 210.0, 350.0, 270.0, 460.0, 190.0, 410.0, 300.0)[:k]
    return LawParams(
        "joint", names,
        JointParams(E=1.7, alpha=0.34, beta=0.28, C=c, gamma=g,
                    C_A=ca, gamma_A=1.1, C_B=cb, gamma_B=0.9),
    )


def grid_design(truth: LawParams, target: str = "quality",
                noise: NoiseModel = NoiseModel(), seed: int = 11,
                n_sizes: int = 4, n_checkpoints: int = 8) -> DesignSpec:
    names = truth.domain_names
    return DesignSpec(
        sizes=even_spacing(100_000_000, 800_000_000, n_sizes, "log"),
        token_checkpoints=even_spacing(
            1_000_000_000, 20_000_000_000, n_checkpoints, "log"
        ),
        mixtures=tuple(simplex_grid(len(names), 0.1, 0.1, names)),
        truth={target: truth},
        noise=noise,
        seed=seed,
    )


def holdout_design(truth: LawParams, target: str = "quality",
                   seed: int = 12, n_mixtures: int = 20,
                   size_scale: int = 10) -> DesignSpec:
    """Unseen mixtures at a model size extrapolated beyond the train grid."""
    names = truth.domain_names
    rng = np.random.default_rng(seed)
    return DesignSpec(
        sizes=(800_000_000 * size_scale,),
        token_checkpoints=(10_000_000_000, 30_000_000_000),
        mixtures=tuple(
            sample_mixtures(len(names), n_mixtures, 0.05, rng, names)
        ),
        truth={target: truth},
        noise=NoiseModel(),
        seed=seed + 1,
    )


@pytest.fixture(scope="session")
def small_noiseless_data():
    """36-mixture grid, 2 sizes, 4 checkpoints, exact additive losses."""
    spec = grid_design(additive_truth(), n_sizes=2, n_checkpoints=4)
    return synth_runs(spec)


@pytest.fixture(scope="session")
def small_noisy_data():
    """Same grid with 0.5% multiplicative log-normal noise."""
    spec = grid_design(
        additive_truth(),
        noise=NoiseModel("multiplicative_lognormal", 0.005),
        seed=13, n_sizes=2, n_checkpoints=4,
    )
    return synth_runs(spec)


def interior_mixture(k: int, names=None, seed: int = 0):
    names = names if names is not None else tuple(f"d{i}" for i in range(k))
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(k)) * 0.7 + 0.3 / k
    return validate_mixture(w.tolist(), names)
