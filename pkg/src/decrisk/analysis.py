"""Offline oracles, Wasserstein-1 diagnostics, and theoretical-bound reports.

The optimum solver minimizes the decision-dependent risk x -> E_{z~D(x)} l(x,z)
directly; the stable solver iterates exact retraining to its fixed point.
Both work analytically for the quadratic location-scale family and through
the transformed empirical rows otherwise.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, SolverError, UnsupportedModel
from .geometry import sample_unit_sphere

GRID_RESOLUTION = 1e-4
PGD_TOL = 1e-8
PGD_CAP = 100_000
FIXED_POINT_CAP = 10_000


def w1_empirical_1d(a, b):
    """Exact Wasserstein-1 distance between two 1-D empirical distributions.

    Equal sizes reduce to the mean absolute difference of sorted samples;
    unequal sizes integrate the quantile-function gap over the merged grid.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ContractViolation("empirical W1 needs nonempty sample lists")
    m, n = a.size, b.size
    if m == n:
        return float(np.mean(np.abs(a - b)))
    grid = np.union1d(np.arange(1, m + 1) / m, np.arange(1, n + 1) / n)
    prev = 0.0
    total = 0.0
    for q in grid:
        mid = 0.5 * (prev + q)
        ia = int(np.ceil(mid * m)) - 1
        ib = int(np.ceil(mid * n)) - 1
        total += (q - prev) * abs(a[ia] - b[ib])
        prev = q
    return float(total)


def sliced_w1(a, b, n_projections, rng, return_stderr=False):
    """Monte-Carlo sliced W1: average 1-D W1 over random projection directions."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ContractViolation("sliced W1 needs nonempty sample sets")
    if a.shape[1] != b.shape[1]:
        raise ContractViolation("sample dimensions must match")
    if n_projections < 1:
        raise ContractViolation("need at least one projection")
    d = a.shape[1]
    if d == 1:
        exact = w1_empirical_1d(a[:, 0], b[:, 0])
        return (exact, 0.0) if return_stderr else exact
    vals = np.empty(n_projections)
    for k in range(n_projections):
        theta = sample_unit_sphere(rng, d)
        vals[k] = w1_empirical_1d(a @ theta, b @ theta)
    est = float(vals.mean())
    if return_stderr:
        se = float(vals.std(ddof=1) / np.sqrt(n_projections)) if n_projections > 1 else 0.0
        return est, se
    return est


def _transformed_rows(dist_map, x):
    """Deterministic image of the empirical base rows under D(x)."""
    base = dist_map.base
    if base.kind != "empirical":
        raise UnsupportedModel("row-based risk needs an empirical base")
    if dist_map.mode == "location-scale":
        return base.samples + dist_map.A @ x
    rows = base.samples.copy()
    strategic = rows[:, -1] == 0.0
    shift = np.where(dist_map.feature_mask, -dist_map.epsilon * x, 0.0)
    rows[strategic, :-1] += shift
    return rows


def performative_risk(model, dist_map, x):
    """E_{z~D(x)} l(x, z), exact for the supported families."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if model.kind == "quadratic-occupancy" and dist_map.mode == "location-scale":
        base = dist_map.base
        mu = base.mean()
        if base.kind == "empirical":
            var = float(np.mean(np.sum((base.samples - mu) ** 2, axis=1)))
        else:
            var = float(np.trace(base.cov))
        resid = mu + dist_map.A @ x - model.target
        return float(resid @ resid + var + 0.5 * model.nu * (x @ x))
    rows = _transformed_rows(dist_map, x)
    return float(np.mean([model.eval(x, z) for z in rows]))


def performative_risk_grad(model, dist_map, x):
    """Total gradient of the decision-dependent risk at x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if model.kind == "quadratic-occupancy" and dist_map.mode == "location-scale":
        mu = dist_map.base.mean()
        resid = mu + dist_map.A @ x - model.target
        return 2.0 * dist_map.A.T @ resid + model.nu * x
    rows = _transformed_rows(dist_map, x)
    total = np.zeros_like(x)
    for z in rows:
        J = dist_map.jacobian_at(z)
        total += model.grad_x(x, z) + J.T @ model.grad_z(x, z)
    return total / rows.shape[0]


def _grad_step_scale(model, dist_map, constraint_set, rng):
    """1/L step for projected gradient on the risk (conservative)."""
    if model.kind == "quadratic-occupancy" and dist_map.mode == "location-scale":
        eigs = np.linalg.eigvalsh(dist_map.A.T @ dist_map.A)
        return 1.0 / (model.nu + 2.0 * float(eigs[-1]))
    # sampled gradient-Lipschitz estimate over random segment pairs
    R = constraint_set.outer_radius
    worst = model.nu if model.nu > 0 else 0.0
    for _ in range(16):
        xa = constraint_set.project(rng.uniform(-R, R, constraint_set.dim))
        xb = constraint_set.project(rng.uniform(-R, R, constraint_set.dim))
        gap = float(np.linalg.norm(xa - xb))
        if gap < 1e-9:
            continue
        diff = np.linalg.norm(
            performative_risk_grad(model, dist_map, xa)
            - performative_risk_grad(model, dist_map, xb)
        )
        worst = max(worst, float(diff) / gap)
    return 1.0 / (2.0 * worst) if worst > 0 else 1.0


def _projected_gradient(grad, constraint_set, x0, step, tol=PGD_TOL, cap=PGD_CAP):
    """PGD with fixed step; returns (point, gradient-mapping residual, iters)."""
    x = constraint_set.project(x0)
    residual = np.inf
    for it in range(cap):
        nxt = constraint_set.project(x - step * grad(x))
        residual = float(np.linalg.norm(x - nxt)) / step
        x = nxt
        if residual <= tol:
            return x, residual, it + 1
    return x, residual, cap


def _grid_search_1d(model, dist_map, constraint_set, resolution=GRID_RESOLUTION):
    if constraint_set.dim != 1:
        raise ContractViolation("grid search is 1-D only")
    if constraint_set.kind == "box":
        lo, hi = constraint_set.lower[0], constraint_set.upper[0]
    else:
        lo, hi = -constraint_set.radius, constraint_set.radius
    grid = np.arange(lo, hi + resolution, resolution)
    grid = grid[grid <= hi + 1e-12]
    if model.kind == "quadratic-occupancy" and dist_map.mode == "location-scale":
        mu = dist_map.base.mean()
        a = dist_map.A[:, 0]
        resid = mu[:, None] + np.outer(a, grid) - model.target
        vals = np.sum(resid**2, axis=0) + 0.5 * model.nu * grid**2
    else:
        vals = np.empty(grid.size)
        for i, g in enumerate(grid):
            vals[i] = performative_risk(model, dist_map, np.array([g]))
    return np.array([grid[int(np.argmin(vals))]])


def _check_convexity(model, dist_map, constraint_set, rng, n_pairs=32):
    R = constraint_set.outer_radius
    for _ in range(n_pairs):
        xa = constraint_set.project(rng.uniform(-R, R, constraint_set.dim))
        xb = constraint_set.project(rng.uniform(-R, R, constraint_set.dim))
        ga = performative_risk_grad(model, dist_map, xa)
        gb = performative_risk_grad(model, dist_map, xb)
        if float((ga - gb) @ (xa - xb)) < -1e-8:
            raise UnsupportedModel(
                "negative curvature along a probe segment; risk is not convex"
            )


def _solve_optimum(model, dist_map, constraint_set, rng=None):
    """Internal optimum solver; returns (x_star, method, residual)."""
    rng = np.random.default_rng(0) if rng is None else rng
    quadratic_ls = (
        model.kind == "quadratic-occupancy" and dist_map.mode == "location-scale"
    )
    if not quadratic_ls:
        _check_convexity(model, dist_map, constraint_set, rng)
    candidates = []
    if quadratic_ls:
        A = dist_map.A
        mu = dist_map.base.mean()
        hess = 2.0 * A.T @ A + model.nu * np.eye(model.decision_dim)
        rhs = -2.0 * A.T @ (mu - model.target)
        unconstrained = np.linalg.solve(hess, rhs)
        candidates.append((constraint_set.project(unconstrained), "closed-form"))
    if constraint_set.dim == 1:
        candidates.append((_grid_search_1d(model, dist_map, constraint_set), "grid"))
    if not candidates:
        candidates.append((np.zeros(constraint_set.dim), "projected-gradient"))
    step = _grad_step_scale(model, dist_map, constraint_set, rng)
    best = None
    for x0, tag in candidates:
        x, residual, iters = _projected_gradient(
            lambda v: performative_risk_grad(model, dist_map, v), constraint_set, x0, step
        )
        value = performative_risk(model, dist_map, x)
        method = tag if iters <= 1 else f"{tag}+projected-gradient"
        if best is None or value < best[0]:
            best = (value, x, method, residual)
    return best[1], best[2], best[3]


def performative_optimum(model, dist_map, constraint_set, rng=None):
    """The risk minimizer over the constraint set."""
    x, _, _ = _solve_optimum(model, dist_map, constraint_set, rng)
    return x


def _static_risk_grad(model, rows, x):
    """Gradient of the retraining objective: distribution frozen at the rows."""
    total = np.zeros_like(x)
    for z in rows:
        total += model.grad_x(x, z)
    return total / rows.shape[0]


def _solve_stable(model, dist_map, constraint_set):
    if model.kind == "quadratic-occupancy":
        # retraining objective is the pure ridge; its constrained argmin is 0
        return np.zeros(model.decision_dim), "closed-form", 0.0
    rng = np.random.default_rng(0)
    step = _grad_step_scale(model, dist_map, constraint_set, rng)
    x = np.zeros(model.decision_dim)
    for _ in range(FIXED_POINT_CAP):
        rows = _transformed_rows(dist_map, x)
        nxt, _, _ = _projected_gradient(
            lambda v: _static_risk_grad(model, rows, v), constraint_set, x, step
        )
        if float(np.linalg.norm(nxt - x)) <= PGD_TOL:
            return nxt, "fixed-point", float(np.linalg.norm(nxt - x))
        x = nxt
    raise SolverError("retraining fixed point did not converge", last_iterate=x)


def performative_stable(model, dist_map, constraint_set):
    """Fixed point of exact retraining: x = argmin E_{z~D(x)} l(., z)."""
    x, _, _ = _solve_stable(model, dist_map, constraint_set)
    return x


@dataclass
class OracleReport:
    """Optimal and stable decisions with solver provenance."""

    x_star: np.ndarray
    x_stable: np.ndarray
    gap: float
    x_star_method: str
    x_stable_method: str
    x_star_residual: float
    x_stable_residual: float

    def to_dict(self):
        return {
            "x_star": self.x_star.tolist(),
            "x_stable": self.x_stable.tolist(),
            "gap": self.gap,
            "x_star_method": self.x_star_method,
            "x_stable_method": self.x_stable_method,
            "x_star_residual": self.x_star_residual,
            "x_stable_residual": self.x_stable_residual,
        }


def oracle_report(model, dist_map, constraint_set, rng=None):
    x_star, m_star, r_star = _solve_optimum(model, dist_map, constraint_set, rng)
    x_stable, m_stab, r_stab = _solve_stable(model, dist_map, constraint_set)
    return OracleReport(
        x_star=x_star,
        x_stable=x_stable,
        gap=float(np.linalg.norm(x_star - x_stable)),
        x_star_method=m_star,
        x_stable_method=m_stab,
        x_star_residual=r_star,
        x_stable_residual=r_stab,
    )


def optimum_offset_bound(constants, delta, x_star_norm):
    """How far the shrunken-set smoothed optimum can sit from the true optimum."""
    ratio = constants.grad_lipschitz / constants.alpha
    return delta * ((1.0 + ratio) * x_star_norm + ratio)


def theory_report(constants, lam, schedule, x_star_norm=0.0, x1_offset=None):
    """Evaluate the mixing-bias and distance bounds along a schedule.

    schedule is a dict: mode "zo" needs delta, dim, epoch_lengths and
    step_sizes; mode "fo" needs eta and epoch_length plus a total_epochs
    count. Bounds are observability only; nothing here gates the algorithms.
    """
    if not (0.0 <= lam < 1.0):
        raise ContractViolation("decay rate must satisfy 0 <= lam < 1")
    c = constants
    mode = schedule["mode"]
    report = {"mode": mode, "lambda": lam}
    geom = lam / (1.0 - lam) ** 2
    if mode == "zo":
        delta = schedule["delta"]
        d = schedule["dim"]
        lengths = list(schedule["epoch_lengths"])
        T = len(lengths)
        tail = (4.0 * c.map_lipschitz * d / (c.alpha * delta)) * (c.loss_bound * geom)
        bias = [c.loss_lipschitz * lam**n * (c.w1_radius + tail) for n in lengths]
        offset = optimum_offset_bound(c, delta, x_star_norm)
        if x1_offset is None:
            x1_offset = 2.0 * x_star_norm + delta
        top = max(
            c.alpha**2 * delta**2 * x1_offset**2,
            16.0 * d**2 * c.loss_bound**2,
        )
        dist = [
            top / ((t + 1) * c.alpha**2 * delta**2) + 2.0 * offset**2
            for t in range(T)
        ]
        report.update(
            epochs=list(range(1, T + 1)),
            epoch_lengths=lengths,
            mixing_bias_bound=bias,
            distance_bound=dist,
            optimum_offset_bound=offset,
        )
    elif mode == "fo":
        eta = schedule["eta"]
        n = schedule["epoch_length"]
        T = int(schedule.get("total_epochs", 1))
        drift = c.map_lipschitz * eta * c.loss_lipschitz * (1.0 + c.map_lipschitz) * geom
        bias_val = c.loss_lipschitz * lam**n * (c.w1_radius + drift)
        contraction = 1.0 / (1.0 + eta * c.alpha)
        noise = 4.0 * eta**2 * c.noise_std**2 * contraction
        report.update(
            epochs=list(range(1, T + 1)),
            epoch_length=n,
            mixing_bias_bound=[bias_val] * T,
            recursion_contraction=contraction,
            recursion_noise_term=noise,
            noise_floor=4.0 * eta * c.noise_std**2 / c.alpha,
        )
    else:
        raise ContractViolation(f"unknown schedule mode {mode!r}")
    return report
