"""Convex constraint sets, Euclidean projections, and random directions.

Supports boxes with per-coordinate bounds and origin-centered balls. The
origin must be interior so the set contains a ball r*B around it, which the
shrunken-set projection of the zeroth-order method relies on.
"""

import numpy as np

from .errors import ContractViolation


class ConstraintSet:
    """A box [lower, upper] or a centered ball of given radius.

    Boxes require lower[i] < 0 < upper[i] per coordinate; balls require
    radius > 0. Both expose the inner radius r (largest c with c*B inside
    the set) and outer radius R (smallest c with the set inside c*B).
    """

    def __init__(self, kind, dim, lower=None, upper=None, radius=None):
        if kind not in ("box", "ball"):
            raise ContractViolation(f"unknown set kind {kind!r}")
        if dim < 1:
            raise ContractViolation("dimension must be >= 1")
        self.kind = kind
        self.dim = int(dim)
        if kind == "box":
            lower = np.asarray(lower, dtype=float).reshape(-1)
            upper = np.asarray(upper, dtype=float).reshape(-1)
            if lower.shape != (dim,) or upper.shape != (dim,):
                raise ContractViolation("box bounds must match the dimension")
            if not np.all(lower < upper):
                raise ContractViolation("box needs lower < upper in every coordinate")
            if not (np.all(lower < 0.0) and np.all(upper > 0.0)):
                raise ContractViolation("origin must be interior to the set")
            self.lower = lower
            self.upper = upper
            self.radius = None
        else:
            if radius is None or radius <= 0.0:
                raise ContractViolation("ball needs radius > 0")
            self.lower = None
            self.upper = None
            self.radius = float(radius)

    @classmethod
    def box(cls, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        return cls("box", lower.size, lower=lower, upper=upper)

    @classmethod
    def ball(cls, radius, dim):
        return cls("ball", dim, radius=radius)

    @property
    def inner_radius(self):
        """Largest r with r*B contained in the set."""
        if self.kind == "box":
            return float(min(np.min(-self.lower), np.min(self.upper)))
        return self.radius

    @property
    def outer_radius(self):
        """Smallest R with the set contained in R*B."""
        if self.kind == "box":
            return float(np.sqrt(np.sum(np.maximum(self.lower**2, self.upper**2))))
        return self.radius

    def project(self, y):
        """Euclidean projection onto the set (clamp for boxes, rescale for balls)."""
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape != (self.dim,):
            raise ContractViolation(
                f"point dimension {y.shape[0]} does not match set dimension {self.dim}"
            )
        if self.kind == "box":
            return np.clip(y, self.lower, self.upper)
        norm = float(np.linalg.norm(y))
        if norm <= self.radius:
            return y.copy()
        out = y * (self.radius / norm)
        # the rescale can overshoot by an ulp; shrink until inside so that
        # reprojection is the exact identity
        for _ in range(4):
            n = float(np.linalg.norm(out))
            if n <= self.radius:
                break
            out = out * (self.radius / n)
        return out

    def contains(self, y, tol=0.0):
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape != (self.dim,):
            raise ContractViolation("dimension mismatch in contains")
        if self.kind == "box":
            return bool(np.all(y >= self.lower - tol) and np.all(y <= self.upper + tol))
        return float(np.linalg.norm(y)) <= self.radius + tol

    def scale(self, factor):
        """The set {factor * x : x in set}, factor in (0, 1]."""
        if not (0.0 < factor <= 1.0):
            raise ContractViolation("scale factor must lie in (0, 1]")
        if self.kind == "box":
            return ConstraintSet.box(self.lower * factor, self.upper * factor)
        return ConstraintSet.ball(self.radius * factor, self.dim)

    def __eq__(self, other):
        if not isinstance(other, ConstraintSet):
            return NotImplemented
        if self.kind != other.kind or self.dim != other.dim:
            return False
        if self.kind == "box":
            return bool(
                np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper)
            )
        return self.radius == other.radius

    def __repr__(self):
        if self.kind == "box":
            return f"ConstraintSet.box({self.lower.tolist()}, {self.upper.tolist()})"
        return f"ConstraintSet.ball({self.radius}, dim={self.dim})"


def sample_unit_sphere(rng, d):
    """Uniform draw from the unit sphere in R^d (normalized Gaussian)."""
    if d < 1:
        raise ContractViolation("dimension must be >= 1")
    while True:
        v = rng.standard_normal(d)
        norm = float(np.linalg.norm(v))
        if norm > 1e-12:
            return v / norm


def sample_unit_ball(rng, d):
    """Uniform draw from the solid unit ball: sphere direction times U^(1/d)."""
    if d < 1:
        raise ContractViolation("dimension must be >= 1")
    v = sample_unit_sphere(rng, d)
    return v * rng.uniform() ** (1.0 / d)
