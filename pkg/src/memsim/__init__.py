"""Behavioral simulator for grounded and floating flux-controlled meminductor emulators."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Coefficients,
    ConfigError,
    EmulatorConfig,
    Fidelity,
    MeminductorState,
    Mode,
    SingularityError,
    Topology,
    build_model,
    closed_form_linv,
    derive_coefficients,
    eval_rhs,
    ideal_limit,
)
from .devices import CcciiParams, MosPair, OtaParams  # noqa: E402
from .engine import SourceSpec, Trace, integrate, source_eval, steady_window  # noqa: E402

__all__ = [
    "__version__", "Coefficients", "ConfigError", "EmulatorConfig", "Fidelity",
    "MeminductorState", "Mode", "SingularityError", "Topology", "build_model",
    "closed_form_linv", "derive_coefficients", "eval_rhs", "ideal_limit",
    "CcciiParams", "MosPair", "OtaParams", "SourceSpec", "Trace", "integrate",
    "source_eval", "steady_window",
]
