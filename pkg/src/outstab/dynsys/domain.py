"""Disturbance value sets and seeded sampling helpers."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

KINDS = ("box", "ball", "finite-set", "singleton-zero")


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Set ``D`` of admissible disturbance values.

    ``singleton-zero`` is the disturbance-free case. Use the ``box``,
    ``ball``, ``finite`` and ``zero`` constructors rather than filling the
    fields by hand.
    """

    kind: str
    dim: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    radius: float | None = None
    points: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.dim < 0:
            raise ValueError("dimension must be nonnegative")
        if self.kind == "box":
            if self.lower.shape != (self.dim,) or self.upper.shape != (self.dim,):
                raise ValueError("box bounds must have shape (dim,)")
            if np.any(self.lower > self.upper):
                raise ValueError("empty box: lower > upper")
        elif self.kind == "ball":
            if self.radius is None or self.radius < 0:
                raise ValueError("ball radius must be nonnegative")
        elif self.kind == "finite-set":
            if self.points is None or self.points.ndim != 2 or len(self.points) == 0:
                raise ValueError("finite-set needs a nonempty (k, dim) array")
            if self.points.shape[1] != self.dim:
                raise ValueError("finite-set points have the wrong dimension")

    @classmethod
    def box(cls, lower, upper):
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        return cls("box", lo.size, lower=lo, upper=hi)

    @classmethod
    def ball(cls, radius, dim=1):
        return cls("ball", int(dim), radius=float(radius))

    @classmethod
    def finite(cls, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return cls("finite-set", pts.shape[1], points=pts)

    @classmethod
    def zero(cls, dim=1):
        return cls("singleton-zero", int(dim))

    @classmethod
    def from_dict(cls, spec):
        kind = spec["kind"]
        if kind == "box":
            return cls.box(spec["lower"], spec["upper"])
        if kind == "ball":
            return cls.ball(spec["radius"], spec.get("dim", 1))
        if kind == "finite-set":
            return cls.finite(spec["points"])
        if kind == "singleton-zero":
            return cls.zero(spec.get("dim", 1))
        raise ValueError(f"unknown domain kind {kind!r}")

    def to_dict(self):
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        if self.kind == "ball":
            return {"kind": "ball", "radius": self.radius, "dim": self.dim}
        if self.kind == "finite-set":
            return {"kind": "finite-set", "points": self.points.tolist()}
        return {"kind": "singleton-zero", "dim": self.dim}

    @property
    def max_norm(self):
        """Largest Euclidean norm of an element of the set."""
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))
        if self.kind == "ball":
            return self.radius
        if self.kind == "finite-set":
            return float(np.max(np.linalg.norm(self.points, axis=1)))
        return 0.0

    def contains(self, values, atol=1e-12):
        """Membership test; ``values`` has shape ``(..., dim)``."""
        v = np.asarray(values, dtype=float)
        if self.kind == "box":
            return np.all((v >= self.lower - atol) & (v <= self.upper + atol), axis=-1)
        if self.kind == "ball":
            return np.linalg.norm(v, axis=-1) <= self.radius + atol
        if self.kind == "finite-set":
            diff = np.abs(v[..., None, :] - self.points)
            return np.any(np.all(diff <= atol, axis=-1), axis=-1)
        return np.all(np.abs(v) <= atol, axis=-1)

    def sample(self, rng, n):
        """Draw ``n`` values from the set (uniformly where that makes sense)."""
        if self.kind == "box":
            return rng.uniform(self.lower, self.upper, size=(n, self.dim))
        if self.kind == "ball":
            return sample_ball(rng, n, self.dim, self.radius)
        if self.kind == "finite-set":
            return self.points[rng.integers(0, len(self.points), size=n)]
        return np.zeros((n, self.dim))

    def grid(self, density):
        """Deterministic grid of values, used for certificate checking."""
        if self.kind == "box":
            axes = [np.linspace(lo, hi, density) if hi > lo else np.array([lo])
                    for lo, hi in zip(self.lower, self.upper)]
            return cartesian(axes)
        if self.kind == "ball":
            axis = np.linspace(-self.radius, self.radius, density)
            pts = cartesian([axis] * self.dim)
            return pts[np.linalg.norm(pts, axis=1) <= self.radius * (1 + 1e-12)]
        if self.kind == "finite-set":
            return self.points.copy()
        return np.zeros((1, self.dim))


def cartesian(axes):
    """Cartesian product of 1-D arrays, last axis varying fastest."""
    if not axes:
        return np.zeros((1, 0))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def sample_ball(rng, n, dim, radius):
    """Uniform samples from the closed Euclidean ball of the given radius."""
    if dim == 0:
        return np.zeros((n, 0))
    direction = rng.standard_normal((n, dim))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    scale = radius * rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / dim)
    return direction / norms * scale


def ball_grid(radius, dim, density, fixed=None):
    """Grid points of the ball ``|x| <= radius``.

    ``fixed`` maps coordinate indices to values held constant, which turns
    the grid into a slice through the ball.
    """
    fixed = fixed or {}
    axes = []
    for i in range(dim):
        if i in fixed:
            axes.append(np.array([float(fixed[i])]))
        else:
            axes.append(np.linspace(-radius, radius, density))
    pts = cartesian(axes)
    return pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]


def lattice_offsets(dim, half_width, factor):
    """Offsets of a local refinement lattice, ``2*factor+1`` points per axis."""
    ticks = [np.linspace(-h, h, 2 * factor + 1) for h in np.broadcast_to(half_width, (dim,))]
    return np.array(list(itertools.product(*ticks)))
