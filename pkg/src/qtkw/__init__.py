"""Prescribed Q/T-curvature on the upper hemisphere S^4_+: symbolic operators,
quadrature, conformal maps, variational functionals and Kazdan-Warner
nonexistence certificates."""

from .expr import EvaluationError, Expr, SourceError, evaluate, parse, to_text
from .sphere import NotInHError, ScalarField, laplace, paneitz3, paneitz4
from .quadrature import IntegrationError, Rules, boundary_rule, hemisphere_rule, integrate
from .conformal import AlgebraElement, ConformalMap, FlowError, MobiusMap, flow, map_of_flow
from .functionals import (
    CandidateSolution,
    PrescribedData,
    cocycle_defect,
    energy,
    gbc_defect,
    manufacture,
    s_functional,
    weak_residual,
)
from .kwcert import (
    Certificate,
    CertifyOptions,
    KWReport,
    NoneFound,
    certify,
    kw_report,
    kw_residual,
    orbit_derivative_check,
    verify_certificate,
)
from .simplex import LPError

__version__ = "0.1.0"

__all__ = [
    "EvaluationError",
    "Expr",
    "SourceError",
    "evaluate",
    "parse",
    "to_text",
    "NotInHError",
    "ScalarField",
    "laplace",
    "paneitz3",
    "paneitz4",
    "IntegrationError",
    "Rules",
    "boundary_rule",
    "hemisphere_rule",
    "integrate",
    "AlgebraElement",
    "ConformalMap",
    "FlowError",
    "MobiusMap",
    "flow",
    "map_of_flow",
    "CandidateSolution",
    "PrescribedData",
    "cocycle_defect",
    "energy",
    "gbc_defect",
    "manufacture",
    "s_functional",
    "weak_residual",
    "Certificate",
    "CertifyOptions",
    "KWReport",
    "NoneFound",
    "certify",
    "kw_report",
    "kw_residual",
    "orbit_derivative_check",
    "verify_certificate",
    "LPError",
]
