"""Loss models with partial gradients and the constants the schedules need."""

from dataclasses import dataclass, field

import numpy as np

from .analysis import w1_empirical_1d
from .errors import ContractViolation, DegenerateProblem
from .geometry import sample_unit_sphere


def _sigmoid(s):
    out = np.empty_like(s, dtype=float)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class LossModel:
    """A loss on (decision, data sample) pairs with analytic partial gradients.

    quadratic-occupancy: squared distance of the sample to the target level
    plus a ridge term, (z - target*1)^2 summed + (nu/2)|x|^2.

    strategic-logistic: regularized logistic loss where the data vector
    packs (features, label); the label is the last coordinate.
    """

    def __init__(self, kind, decision_dim, data_dim, nu, target=0.7):
        if kind not in ("quadratic-occupancy", "strategic-logistic"):
            raise ContractViolation(f"unknown loss kind {kind!r}")
        if decision_dim < 1 or data_dim < 1:
            raise ContractViolation("dimensions must be >= 1")
        if kind == "quadratic-occupancy" and nu <= 0.0:
            raise ContractViolation("quadratic-occupancy needs nu > 0")
        if kind == "strategic-logistic":
            if nu < 0.0:
                raise ContractViolation("regularization must be >= 0")
            if data_dim != decision_dim + 1:
                raise ContractViolation("logistic data packs features plus one label")
        self.kind = kind
        self.decision_dim = int(decision_dim)
        self.data_dim = int(data_dim)
        self.nu = float(nu)
        self.target = float(target)

    @classmethod
    def quadratic_occupancy(cls, decision_dim, nu, data_dim=None, target=0.7):
        if data_dim is None:
            data_dim = decision_dim
        return cls("quadratic-occupancy", decision_dim, data_dim, nu, target=target)

    @classmethod
    def strategic_logistic(cls, n_features, nu):
        return cls("strategic-logistic", n_features, n_features + 1, nu)

    def _check(self, x, z):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if x.shape != (self.decision_dim,):
            raise ContractViolation("decision dimension mismatch")
        if z.shape != (self.data_dim,):
            raise ContractViolation("data dimension mismatch")
        return x, z

    def eval(self, x, z):
        x, z = self._check(x, z)
        if self.kind == "quadratic-occupancy":
            resid = z - self.target
            return float(resid @ resid + 0.5 * self.nu * (x @ x))
        phi, y = z[:-1], z[-1]
        s = float(x @ phi)
        return float(-y * s + np.logaddexp(0.0, s) + 0.5 * self.nu * (x @ x))

    def grad_x(self, x, z):
        x, z = self._check(x, z)
        if self.kind == "quadratic-occupancy":
            return self.nu * x
        phi, y = z[:-1], z[-1]
        s = np.atleast_1d(x @ phi)
        return (_sigmoid(s)[0] - y) * phi + self.nu * x

    def grad_z(self, x, z):
        x, z = self._check(x, z)
        if self.kind == "quadratic-occupancy":
            return 2.0 * (z - self.target)
        phi, y = z[:-1], z[-1]
        s = np.atleast_1d(x @ phi)
        g = np.empty(self.data_dim)
        g[:-1] = (_sigmoid(s)[0] - y) * x
        g[-1] = -s[0]
        return g


def strategic_best_response(features, x, epsilon, mask=None):
    """Features shifted by -epsilon * x on the strategic coordinates.

    Closed-form argmax of -<x, w> - |w - features|^2 / (2 epsilon) over the
    masked subset; unmasked coordinates stay put.
    """
    if epsilon < 0.0:
        raise ContractViolation("epsilon must be >= 0")
    features = np.atleast_1d(np.asarray(features, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if mask is None:
        mask = np.ones(features.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    out = features.copy()
    out[mask] -= epsilon * x[mask]
    return out


@dataclass
class ProblemConstants:
    """The quantities that drive schedules and theoretical bounds.

    alpha: strong convexity of the decision-dependent risk; grad_lipschitz:
    Lipschitz constant of its gradient; hessian_lipschitz: Lipschitz constant
    of its Hessian; loss_lipschitz: Lipschitz constant of the loss in (x, z);
    loss_bound: uniform bound on the loss; noise_std: gradient-noise standard
    deviation; map_lipschitz: W1 Lipschitz constant of the distribution map;
    w1_radius: largest W1 distance from p0 to any reachable fixed point.
    """

    alpha: float
    grad_lipschitz: float
    hessian_lipschitz: float
    loss_lipschitz: float
    loss_bound: float
    noise_std: float
    map_lipschitz: float
    w1_radius: float
    method: str = field(default="analytic")

    def __post_init__(self):
        values = [
            self.alpha,
            self.grad_lipschitz,
            self.hessian_lipschitz,
            self.loss_lipschitz,
            self.loss_bound,
            self.noise_std,
            self.map_lipschitz,
            self.w1_radius,
        ]
        if any(v < 0.0 for v in values):
            raise ContractViolation("problem constants must be nonnegative")
        if self.alpha <= 0.0:
            raise DegenerateProblem("strong convexity must be positive for schedules")


def _data_range(dist_map, constraint_set):
    """Conservative per-coordinate range of reachable data samples."""
    base = dist_map.base
    if base.kind == "empirical":
        lo = base.samples.min(axis=0).astype(float)
        hi = base.samples.max(axis=0).astype(float)
    else:
        sd = np.sqrt(np.diag(base.cov))
        lo = base.mean() - 6.0 * sd
        hi = base.mean() + 6.0 * sd
    slack = np.linalg.norm(dist_map.A, axis=1) * constraint_set.outer_radius
    lo, hi = lo - slack, hi + slack
    if dist_map.clip_range is not None:
        lo = np.maximum(lo, dist_map.clip_range[0])
        hi = np.minimum(hi, dist_map.clip_range[1])
    return lo, hi


def _grid_decisions(constraint_set, rng, n_grid=33, n_random=32):
    """Probe decisions covering the set: 1-D grid, else corners plus randoms."""
    if constraint_set.dim == 1:
        if constraint_set.kind == "box":
            lo, hi = constraint_set.lower[0], constraint_set.upper[0]
        else:
            lo, hi = -constraint_set.radius, constraint_set.radius
        return [np.array([g]) for g in np.linspace(lo, hi, n_grid)]
    points = []
    if constraint_set.kind == "box" and constraint_set.dim <= 12:
        for mask in range(2**constraint_set.dim):
            corner = np.where(
                [(mask >> i) & 1 for i in range(constraint_set.dim)],
                constraint_set.upper,
                constraint_set.lower,
            )
            points.append(corner.astype(float))
    R = constraint_set.outer_radius
    for _ in range(n_random):
        points.append(constraint_set.project(rng.uniform(-R, R, constraint_set.dim)))
    return points

def _estimate_w1_radius(dist_map, p0, constraint_set, rng, n_draws=512):
    """max over probe decisions of W1(p0, D(x)); exact samples in 1-D."""
    if p0.kind == "empirical":
        ref = p0.samples
    else:
        ref = p0.sample(rng, size=n_draws)
    worst = 0.0
    for x in _grid_decisions(constraint_set, rng):
        fixed = dist_map.sample_fixed_point(x, rng, size=max(len(ref), n_draws))
        if dist_map.data_dim == 1:
            w = w1_empirical_1d(ref[:, 0], fixed[:, 0])
        else:
            # cheap sliced proxy; logged as an estimate by the caller
            total = 0.0
            for _ in range(16):
                theta = sample_unit_sphere(rng, dist_map.data_dim)
                total += w1_empirical_1d(ref @ theta, fixed @ theta)
            w = total / 16.0
        worst = max(worst, w)
    return worst


def _mc_noise_std(model, dist_map, x_ref, rng, n_mc):
    """Std of the full-weight first-order estimator at the reference point."""
    draws = dist_map.sample_fixed_point(x_ref, rng, size=n_mc)
    grads = np.empty((n_mc, model.decision_dim))
    for i in range(n_mc):
        z = draws[i]
        J = dist_map.jacobian_at(z)
        grads[i] = model.grad_x(x_ref, z) + J.T @ model.grad_z(x_ref, z)
    centered = grads - grads.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))


def compute_constants(
    model,
    dist_map,
    constraint_set,
    rng,
    p0=None,
    noise_std=None,
    w1_radius=None,
    n_mc=10_000,
):
    """Problem constants for the given instance.

    Quadratic-occupancy constants are analytic (risk Hessian 2 A^T A + nu I);
    logistic constants are sampled estimates. noise_std and w1_radius accept
    overrides; otherwise noise_std is a Monte-Carlo estimate at the origin and
    w1_radius scans probe decisions over the set.
    """
    if p0 is None:
        p0 = dist_map.base
    R = constraint_set.outer_radius
    lo, hi = _data_range(dist_map, constraint_set)
    if model.kind == "quadratic-occupancy":
        M = dist_map.A.T @ dist_map.A
        eigs = np.linalg.eigvalsh(M)
        alpha = model.nu + 2.0 * float(eigs[0])
        G = model.nu + 2.0 * float(eigs[-1])
        H = 0.0
        worst_resid_sq = float(
            np.sum(np.maximum((lo - model.target) ** 2, (hi - model.target) ** 2))
        )
        loss_bound = worst_resid_sq + 0.5 * model.nu * R**2
        L = float(np.hypot(model.nu * R, 2.0 * np.sqrt(worst_resid_sq)))
        method = "analytic"
    else:
        alpha, G, H, L, loss_bound = _sampled_logistic_constants(
            model, dist_map, constraint_set, rng
        )
        method = "sampled"
    if alpha <= 0.0:
        raise DegenerateProblem("estimated strong convexity is not positive")
    if noise_std is None:
        noise_std = _mc_noise_std(model, dist_map, np.zeros(model.decision_dim), rng, n_mc)
    if w1_radius is None:
        w1_radius = _estimate_w1_radius(dist_map, p0, constraint_set, rng)
    return ProblemConstants(
        alpha=alpha,
        grad_lipschitz=G,
        hessian_lipschitz=H,
        loss_lipschitz=L,
        loss_bound=loss_bound,
        noise_std=noise_std,
        map_lipschitz=dist_map.gamma,
        w1_radius=w1_radius,
        method=method,
    )


def _sampled_logistic_constants(model, dist_map, constraint_set, rng, n_batch=2000):
    """Conservative sampled bounds for the logistic risk's curvature scale."""
    R = constraint_set.outer_radius
    probes = _grid_decisions(constraint_set, rng, n_grid=9, n_random=8)
    max_feat_sq = 0.0
    max_loss = 0.0
    max_grad_sq = 0.0
    hessians = []
    for x in probes:
        batch = dist_map.sample_fixed_point(x, rng, size=n_batch)
        phi = batch[:, :-1]
        y = batch[:, -1]
        s = phi @ x
        p = _sigmoid(s)
        max_feat_sq = max(max_feat_sq, float(np.max(np.sum(phi**2, axis=1))))
        losses = -y * s + np.logaddexp(0.0, s) + 0.5 * model.nu * float(x @ x)
        max_loss = max(max_loss, float(np.max(losses)))
        gx = (p - y)[:, None] * phi + model.nu * x
        gz_feat = (p - y)[:, None] * x
        grad_sq = np.sum(gx**2, axis=1) + np.sum(gz_feat**2, axis=1) + s**2
        max_grad_sq = max(max_grad_sq, float(np.max(grad_sq)))
        w = p * (1.0 - p)
        hessians.append((phi.T * w) @ phi / n_batch + model.nu * np.eye(model.decision_dim))
    alpha = model.nu
    G = model.nu + 0.25 * max_feat_sq
    # coarse Hessian-variation estimate across probe pairs
    H = 0.0
    for i in range(len(probes)):
        for j in range(i + 1, len(probes)):
            gap = float(np.linalg.norm(probes[i] - probes[j]))
            if gap > 1e-9:
                H = max(H, float(np.linalg.norm(hessians[i] - hessians[j], 2)) / gap)
    L = float(np.sqrt(max_grad_sq))
    loss_bound = 1.5 * max_loss + 0.5 * model.nu * R**2
    return alpha, G, H, L, loss_bound
