"""Learning single-index models under Gaussian inputs and adversarial label noise.

Warm start from the unfolded Chow tensor, then Riemannian SGD on the unit
sphere, with Hermite and tensor utilities, synthetic problem generators,
evaluation oracles and an experiment harness.
"""

from .chow_pca import ChowAccumulator, InitConfig, InitReport, chow_matrix, init_tensor_pca, pca_solve, top_left_singular
from .estimators import ChowTensorPCA, SingleIndexRegressor
from .evaluation import EvalReport, alignment, evaluate, l2_loss_mc, loss_upper_bound, noiseless_loss_closed, population_g_star
from .exceptions import DegenerateInputError, InvalidLinkError, ResourceLimitError
from .hermite import contract_power, contract_power_grad, hermite_coefficients, hermite_eval, hermite_tensor_dense
from .links import LinkSpec, info_exponent, load_link, make_link
from .sphere_gd import GDConfig, TrainReport, empirical_gradient, project_tangent, riemannian_step, train, truncated_loss_empirical
from .synth import ArraySampler, ProblemInstance, Sampler, make_instance, sample_batch

__version__ = "0.1.0"

__all__ = [
    "ArraySampler",
    "ChowAccumulator",
    "ChowTensorPCA",
    "DegenerateInputError",
    "EvalReport",
    "GDConfig",
    "InitConfig",
    "InitReport",
    "InvalidLinkError",
    "LinkSpec",
    "ProblemInstance",
    "ResourceLimitError",
    "Sampler",
    "SingleIndexRegressor",
    "TrainReport",
    "alignment",
    "chow_matrix",
    "contract_power",
    "contract_power_grad",
    "empirical_gradient",
    "evaluate",
    "hermite_coefficients",
    "hermite_eval",
    "hermite_tensor_dense",
    "info_exponent",
    "init_tensor_pca",
    "l2_loss_mc",
    "load_link",
    "loss_upper_bound",
    "make_instance",
    "make_link",
    "noiseless_loss_closed",
    "pca_solve",
    "population_g_star",
    "project_tangent",
    "riemannian_step",
    "sample_batch",
    "top_left_singular",
    "train",
    "truncated_loss_empirical",
]
