"""The two gradient estimators the algorithms consume."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass
class GradientSample:
    """One oracle call: the estimate plus what produced it."""

    estimate: np.ndarray
    query_point: np.ndarray
    data_sample: np.ndarray
    direction: np.ndarray | None = None


def zo_gradient(model, x, v, delta, z, d=None):
    """One-point estimate (d/delta) * l(x + delta v, z) * v.

    Unbiased for the gradient of the ball-smoothed loss when v is uniform
    on the unit sphere and z is drawn from the current environment.
    """
    if delta <= 0.0:
        raise ContractViolation("query radius must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if abs(float(np.linalg.norm(v)) - 1.0) > 1e-9:
        raise ContractViolation("direction must be a unit vector")
    if d is None:
        d = x.size
    value = model.eval(x + delta * v, z)
    return (d / delta) * value * v


def fo_gradient(model, dist_map, x, z, lam, n):
    """Estimate grad_x l(x,z) + (1 - lam**n) J^T grad_z l(x,z).

    J is the map's shift matrix (or the sample's masked Jacobian in
    strategic mode). With z drawn from the environment state reached after
    n steps at x, this is unbiased for the gradient of the current risk.
    """
    if not (0.0 <= lam < 1.0):
        raise ContractViolation("decay rate must satisfy 0 <= lam < 1")
    if n < 1:
        raise ContractViolation("epoch length must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    J = dist_map.jacobian_at(z)
    weight = 1.0 - lam**n
    return model.grad_x(x, z) + weight * (J.T @ model.grad_z(x, z))
