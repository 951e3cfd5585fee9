"""mixlaw: data-mixture scaling laws.

Fit parametric laws that predict target-domain loss from model size N,
training tokens D, and domain weights h; evaluate and extrapolate them; and
derive optimal domain weights by mirror descent on the simplex.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402,F401
    Dataset,
    MixtureVector,
    RunRecord,
    TargetWeights,
    flops,
    js_distance,
    uniform_mixture,
    validate_mixture,
)
from .errors import MixLawError  # noqa: F401
from .laws import (  # noqa: F401
    AdditiveParams,
    ChinchillaParams,
    FullParams,
    GeParams,
    JointParams,
    LawParams,
    SimpleParams,
    YeParams,
    asymptotic_loss,
    embed_additive_in_joint,
    embed_joint_in_full,
    eval_law,
    grad_mixture,
    grad_params,
)
from .fitkit import FitConfig, FitResult, fit_law, huber, mre  # noqa: F401
from .mixopt import (  # noqa: F401
    MixtureReport,
    OptimizeConfig,
    asymptote_trace,
    corner_profile,
    fixed_point_scan,
    mirror_descent,
)
from .synthlab import (  # noqa: F401
    DesignSpec,
    NoiseModel,
    sample_mixtures,
    simplex_grid,
    synth_runs,
)
