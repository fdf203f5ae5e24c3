"""Linear delay systems: simulation, spectra, certificates and asymptotics."""

from .asymptotics import (
    ComparisonReport,
    ExponentFit,
    GammaClass,
    classify_gamma,
    default_horizon,
    default_step,
    estimate_exponent,
    perron_compare,
    verify_stability_verdict,
)
from .certifiers import (
    Certificate,
    abscissa_bound,
    certify_mixed,
    certify_point_delay_independent,
    certify_remark43,
    default_betas,
    hinf_sweep,
    matrix_measure,
)
from .errors import (
    BlowUpError,
    ConvergenceError,
    DelaySpectraError,
    EnvelopeViolation,
    NumericalFailure,
    UnsupportedMultiplicity,
    ValidationError,
)
from .expoly import ExpPoly, Term
from .io import SpecFile, load_spec, parse_spec, spec_to_dict
from .model import (
    Atom,
    DelaySystem,
    FiniteTerm,
    Forcing,
    HistoryFunction,
    KernelSpec,
    PerturbationSpec,
    PointTerm,
    TimeMatrix,
    VolterraTerm,
    kernel_measure,
    kernel_transform,
    validate_perturbation,
    validate_system,
)
from .simulator import (
    HypothesisReport,
    Trajectory,
    hypothesis_check,
    integrate_limiting,
    integrate_perturbed,
    perturbation_value,
    string_norm,
)
from .spectrum import (
    CharacteristicRoot,
    Eigensolution,
    LambdaSets,
    RootSet,
    characteristic_det,
    characteristic_matrix,
    eigensolution,
    find_roots,
    lambda_sets,
    spectral_abscissa,
)

__version__ = "0.1.0"

__all__ = [
    "spec_to_dict",
    "parse_spec",
    "load_spec",
    "SpecFile",
    "Term",
    "ExpPoly",
    "ComparisonReport",
    "ExponentFit",
    "GammaClass",
    "classify_gamma",
    "default_horizon",
    "default_step",
    "estimate_exponent",
    "perron_compare",
    "verify_stability_verdict",
    "Certificate",
    "abscissa_bound",
    "certify_mixed",
    "certify_point_delay_independent",
    "certify_remark43",
    "default_betas",
    "hinf_sweep",
    "matrix_measure",
    "BlowUpError",
    "ConvergenceError",
    "DelaySpectraError",
    "EnvelopeViolation",
    "NumericalFailure",
    "UnsupportedMultiplicity",
    "ValidationError",
    "Atom",
    "DelaySystem",
    "FiniteTerm",
    "Forcing",
    "HistoryFunction",
    "KernelSpec",
    "PerturbationSpec",
    "PointTerm",
    "TimeMatrix",
    "VolterraTerm",
    "kernel_measure",
    "kernel_transform",
    "validate_perturbation",
    "validate_system",
    "HypothesisReport",
    "Trajectory",
    "hypothesis_check",
    "integrate_limiting",
    "integrate_perturbed",
    "perturbation_value",
    "string_norm",
    "CharacteristicRoot",
    "Eigensolution",
    "LambdaSets",
    "RootSet",
    "characteristic_det",
    "characteristic_matrix",
    "eigensolution",
    "find_roots",
    "lambda_sets",
    "spectral_abscissa",
]
