"""Composable reaction-diffusion-chemotaxis models of viral inflammation."""

from .analysis import (
    ClassifierThresholds,
    CourseClassification,
    SigmaReport,
    classify,
    inhomogeneity_index,
    sigma_criterion,
)
from .grid_ops import (
    DEFAULT_THETA,
    AnisotropyMap,
    Grid,
    Region,
    aniso_diffusion,
    chemotaxis_div,
    chi_theta,
    integrate_domain,
    laplacian_neumann,
)
from .mechanisms import KINDS, ConfigError, MechanismTerm, eval_term, eval_term_derivative
from .model_family import (
    ModelDefinition,
    RhsFunction,
    SystemState,
    TaxisTerm,
    assemble_rhs,
    initial_state,
    preset,
)
from .requirements import RequirementReport, SampleSpec, check_requirements
from .solver import IntegrationError, SolverConfig, Trajectory, integrate, stiffness_probe

__version__ = "0.1.0"
