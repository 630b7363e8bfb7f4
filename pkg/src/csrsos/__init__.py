"""Lyapunov-based estimates of the constrained stability region of power systems.

Modules: ``poly`` (sparse polynomials), ``sdp`` (block SDP front end),
``sos`` (Gram-matrix SOS programs), ``powersys`` (network model and its
polynomial form), ``roa`` (certificate synthesis), ``sim`` (time-domain
oracle) and ``cli``.
"""

from .poly import Polynomial, lie_derivative, monomials_up_to, variables
from .powersys import ConstrainedPolySystem, build_study, fixture_path, load_model, transform_to_polynomial
from .roa import DegreeProfile, LyapunovCertificate, RoaOptions, certificate_check, estimate_csr
from .sdp import SdpProblem, SdpSettings, SdpStatus
from .sos import SosProgram, check_sos

__all__ = [
    "Polynomial", "lie_derivative", "monomials_up_to", "variables",
    "ConstrainedPolySystem", "build_study", "fixture_path", "load_model", "transform_to_polynomial",
    "DegreeProfile", "LyapunovCertificate", "RoaOptions", "certificate_check", "estimate_csr",
    "SdpProblem", "SdpSettings", "SdpStatus", "SosProgram", "check_sos",
]
