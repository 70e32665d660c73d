"""Built-in systems and their certificate bundles."""

from __future__ import annotations

import numpy as np

from . import rates
from .certkit import CertificateBundle
from .dads import DadsParams, closed_loop_system, dads_certificates
from .dynsys import DomainSpec, DynamicalSystem, ScalarField


def example1(d_bound=1.0):
    """``x1' = x1/(1+|x1|)``, ``x2' = (d - x2)/sqrt(1+x1^2)``, output ``x2``.

    ``x1`` escapes to infinity whenever ``x1(0) != 0`` while ``x2`` is IOS
    with linear gain.
    """

    def field_(x, d):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x1 / (1 + np.abs(x1)), (d[..., 0] - x2) / np.sqrt(1 + x1**2)], axis=-1)

    return DynamicalSystem(2, 1, field_, lambda x: x[..., 1:2],
                           DomainSpec.box([-d_bound], [d_bound]), name="example1")


def _v1(x):
    return 0.5 * x[..., 1] ** 2 * np.sqrt(1 + x[..., 0] ** 2)


def _v1_grad(x):
    x1, x2 = x[..., 0], x[..., 1]
    root = np.sqrt(1 + x1**2)
    return np.stack([0.5 * x2**2 * x1 / root, x2 * root], axis=-1)


def _w1(x):
    return x[..., 1] ** 2


def _w1_grad(x):
    return np.stack([np.zeros_like(x[..., 0]), 2 * x[..., 1]], axis=-1)


def example1_bundle(r=1.0):
    """``V = x2^2 sqrt(1+x1^2)/2``, ``W = x2^2``, ``rho = s/8``, ``chi = 8s^2``, ``a = s^2``."""
    return CertificateBundle(
        V=ScalarField(_v1, _v1_grad, "V_ex1"),
        W=ScalarField(_w1, _w1_grad, "W_ex1"),
        rho=rates.linear(1 / 8),
        a=rates.power(2),
        chi=rates.power(2, 8.0),
        r=r,
    )


CATALOG = {
    "example1": {
        "dims": (2, 1),
        "description": "planar system with unbounded x1 and IOS output x2",
        "parameters": {"d_bound": {"type": "number", "default": 1.0, "exclusiveMinimum": 0}},
    },
    "dads": {
        "dims": (2, 1),
        "description": "deadzone-adapted disturbance suppression loop on (y, z), output (|y|-sqrt(2 eps))^+",
        "parameters": {
            "Gamma": {"type": "number", "default": 1.0, "exclusiveMinimum": 0},
            "eps_dz": {"type": "number", "default": 0.1, "exclusiveMinimum": 0},
            "c": {"type": "number", "default": 1.0, "exclusiveMinimum": 0},
            "a": {"type": "number", "default": 0.5, "exclusiveMinimum": 0},
            "phi": {"type": "string", "default": "one", "enum": ["one", "y", "y^2"]},
            "theta": {"type": "number", "default": 0.0},
            "lam": {"type": "number", "default": None, "description": "IOS rate split in (0,1)"},
            "d_bound": {"type": "number", "default": 10.0, "exclusiveMinimum": 0},
        },
    },
}


def list_builtin_systems():
    """Catalog entries ``{id, dims, description, parameters}`` sorted by id."""
    return [{"id": key, "dims": list(val["dims"]), "description": val["description"],
             "parameters": val["parameters"]} for key, val in sorted(CATALOG.items())]


def build(system_id, params=None):
    """Resolve a catalog id to ``(system, bundle)``."""
    params = dict(params or {})
    if system_id not in CATALOG:
        raise KeyError(f"unknown system {system_id!r}")
    allowed = CATALOG[system_id]["parameters"]
    unknown = set(params) - set(allowed)
    if unknown:
        raise KeyError(f"unknown parameters for {system_id}: {sorted(unknown)}")
    merged = {k: v["default"] for k, v in allowed.items()}
    merged.update(params)
    if system_id == "example1":
        return example1(merged["d_bound"]), example1_bundle()
    p = DadsParams(merged["Gamma"], merged["eps_dz"], merged["c"], merged["a"], merged["phi"])
    system = closed_loop_system(p, merged["theta"], merged["d_bound"])
    return system, dads_certificates(p, merged["theta"], lam=merged["lam"])
