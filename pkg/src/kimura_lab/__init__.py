"""Numerical laboratory for degenerate Kimura-type diffusions.

Translate degenerate generators into SDEs, simulate them with boundary-aware
schemes, evaluate stopped stochastic representations under changes of
measure, estimate weighted transition densities, and probe two-cylinder
sup/inf ratios, all against independent closed-form and grid-solver oracles.
"""

from .errors import KimuraLabError
from .geometry import (
    DomainSpec,
    MetricBall,
    ParabolicCylinder,
    Point,
    QuadratureConfig,
    StateSpaceDims,
    WeightedMeasure,
    cylinder_sets,
    mu_ball,
    mu_ball_comparator,
    mu_density,
    rho,
)
from .operators import (
    AssumptionConstants,
    SingularOperatorSpec,
    StandardOperatorSpec,
    apply_singular,
    apply_standard,
    bilinear_form,
    derive_singular_from_standard,
    validate_assumptions,
)
from .sde import (
    GirsanovField,
    SdeCoefficients,
    StandardSdeCoefficients,
    build_sde_coefficients,
    build_standard_sde_coefficients,
    dispersion_sqrt,
    girsanov_theta,
    make_girsanov_field,
)
from .simulate import PathBundle, PathConfig, simulate_bundle, step_singular, step_standard

__version__ = "0.1.0"

__all__ = [
    "KimuraLabError",
    "Point",
    "StateSpaceDims",
    "DomainSpec",
    "MetricBall",
    "ParabolicCylinder",
    "QuadratureConfig",
    "WeightedMeasure",
    "rho",
    "mu_density",
    "mu_ball",
    "mu_ball_comparator",
    "cylinder_sets",
    "AssumptionConstants",
    "StandardOperatorSpec",
    "SingularOperatorSpec",
    "apply_standard",
    "apply_singular",
    "bilinear_form",
    "validate_assumptions",
    "derive_singular_from_standard",
    "SdeCoefficients",
    "StandardSdeCoefficients",
    "GirsanovField",
    "build_sde_coefficients",
    "build_standard_sde_coefficients",
    "dispersion_sqrt",
    "girsanov_theta",
    "make_girsanov_field",
    "PathConfig",
    "PathBundle",
    "simulate_bundle",
    "step_singular",
    "step_standard",
]
