"""Numerical certification of output stability and input-to-output stability."""

__version__ = "0.1.0"

from .certkit import CertificateBundle, DomainSample, Verdict, certify, check_implication, rectified_u
from .dynsys import DisturbanceSignal, DomainSpec, DynamicalSystem, ScalarField, Trajectory, make_signal, simulate
from .rates import RateFunction

__all__ = [
    "CertificateBundle",
    "DisturbanceSignal",
    "DomainSample",
    "DomainSpec",
    "DynamicalSystem",
    "RateFunction",
    "ScalarField",
    "Trajectory",
    "Verdict",
    "certify",
    "check_implication",
    "make_signal",
    "rectified_u",
    "simulate",
]
