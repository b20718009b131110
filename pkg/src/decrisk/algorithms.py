"""Epoch-based zeroth-order and first-order methods plus retraining baselines.

Every run deploys a decision, lets the environment mix toward its fixed
point for the epoch length, draws one sample (a batch for the retraining
baseline), and updates. Runs copy the environment state they are given, so
a caller can reuse one initial state across seeds.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, SolverError
from .geometry import sample_unit_sphere
from .losses import _sigmoid
from .oracles import fo_gradient, zo_gradient

STEP_SLACK = 1.0 + 1e-9  # tolerance on step-size cap comparisons


@dataclass
class ZOConfig:
    """Zeroth-order run settings; the step rule is fixed at eta_t = 4/(alpha t)."""

    delta: float
    total_epochs: int
    epoch_length: object = "theoretical"  # int, per-epoch list, or "theoretical"
    seed: int = 0
    x1: object = None

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ContractViolation("query radius must be positive")
        if self.delta >= 1.0:
            raise ContractViolation("query radius must be < 1 so the shrunken set exists")
        if self.total_epochs < 0:
            raise ContractViolation("epoch count must be >= 0")
        _check_epoch_length_field(self.epoch_length, self.total_epochs)


@dataclass
class FOConfig:
    """First-order run settings: one step size and epoch count per super-epoch."""

    step_sizes: list
    epoch_counts: list
    epoch_length: object = "theoretical"
    target_eps: float | None = None
    seed: int = 0
    x1: object = None

    def __post_init__(self):
        self.step_sizes = [float(s) for s in np.atleast_1d(self.step_sizes)]
        self.epoch_counts = [int(t) for t in np.atleast_1d(self.epoch_counts)]
        if len(self.step_sizes) != len(self.epoch_counts):
            raise ContractViolation("need one epoch count per super-epoch step size")
        if len(self.step_sizes) == 0:
            raise ContractViolation("need at least one super-epoch")
        if any(s <= 0.0 for s in self.step_sizes):
            raise ContractViolation("step sizes must be positive")
        if any(t < 1 for t in self.epoch_counts):
            raise ContractViolation("every super-epoch needs at least one epoch")
        _check_epoch_length_field(self.epoch_length, len(self.step_sizes))

    @property
    def n_super_epochs(self):
        return len(self.step_sizes)

    @property
    def total_epochs(self):
        return sum(self.epoch_counts)


def _check_epoch_length_field(value, expected_count):
    if isinstance(value, str):
        if value != "theoretical":
            raise ContractViolation(f"unknown epoch length spec {value!r}")
        return
    if isinstance(value, (list, tuple, np.ndarray)):
        if len(value) != expected_count:
            raise ContractViolation("per-epoch length list does not match the run length")
        if any(int(n) < 1 for n in value):
            raise ContractViolation("epoch lengths must be >= 1")
        return
    if int(value) < 1:
        raise ContractViolation("epoch length must be >= 1")


@dataclass
class Trajectory:
    """Per-epoch telemetry for one run."""

    mode: str
    seed: int
    records: list = field(default_factory=list)
    final_decision: np.ndarray = None
    config_echo: dict = field(default_factory=dict)

    def append(
        self,
        epoch,
        super_epoch,
        step_size,
        epoch_length,
        decision,
        sample,
        gradient,
        post_decision,
        weights_summary,
        direction=None,
    ):
        self.records.append(
            {
                "epoch": epoch,
                "super_epoch": super_epoch,
                "step_size": step_size,
                "epoch_length": epoch_length,
                "decision": np.asarray(decision, dtype=float).copy(),
                "sample": np.asarray(sample, dtype=float).copy(),
                "gradient": np.asarray(gradient, dtype=float).copy(),
                "post_decision": np.asarray(post_decision, dtype=float).copy(),
                "weights_summary": weights_summary,
                "direction": None if direction is None else np.asarray(direction).copy(),
                "wall_clock": time.perf_counter(),
            }
        )

    @property
    def decisions(self):
        """Deployed decisions per epoch, shape (epochs, dim)."""
        return np.array([r["decision"] for r in self.records])

    def to_frame(self, x_star=None):
        """The pinned telemetry schema as a pandas DataFrame."""
        import pandas as pd

        rows = []
        for r in self.records:
            row = {
                "epoch": r["epoch"],
                "super_epoch": r["super_epoch"],
                "step_size": r["step_size"],
                "epoch_length": r["epoch_length"],
            }
            for i, val in enumerate(r["decision"]):
                row[f"decision_{i}"] = val
            for i, val in enumerate(r["sample"]):
                row[f"sample_{i}"] = val
            for i, val in enumerate(r["gradient"]):
                row[f"gradient_{i}"] = val
            if x_star is None:
                row["dist_to_opt"] = np.nan
            else:
                row["dist_to_opt"] = float(np.linalg.norm(r["decision"] - x_star))
            rows.append(row)
        return pd.DataFrame(rows)

    def to_csv(self, path, x_star=None):
        self.to_frame(x_star=x_star).to_csv(path, index=False)


def zo_epoch_length(constants, lam, delta, eta_t, d):
    """Epochs of mixing needed so the zeroth-order bias matches the step scale.

    ceil of log(numerator / denominator) / log(1/lam) where the numerator is
    the initial W1 radius plus the drift term and the denominator is the
    step-scaled tolerance; clamped below at 1, and 1 when lam = 0.
    """
    if lam >= 1.0 or lam < 0.0:
        raise ContractViolation("decay rate must satisfy 0 <= lam < 1")
    if lam == 0.0:
        return 1
    c = constants
    numerator = c.w1_radius + (4.0 * c.map_lipschitz * d / (c.alpha * delta)) * (
        lam * c.loss_bound / (1.0 - lam) ** 2
    )
    denominator = math.sqrt(
        eta_t * (c.alpha / c.loss_lipschitz**2) * (c.loss_bound**2 * d**2 / (4.0 * delta**2))
    )
    if denominator <= 0.0:
        raise ContractViolation("epoch length formula needs positive loss scale")
    ratio = numerator / denominator
    if ratio <= 1.0:
        return 1
    return max(1, math.ceil(math.log(ratio) / math.log(1.0 / lam)))


def fo_epoch_length(constants, lam, eta):
    """Epochs of mixing needed so the first-order bias matches the noise scale."""
    if lam >= 1.0 or lam < 0.0:
        raise ContractViolation("decay rate must satisfy 0 <= lam < 1")
    if lam == 0.0:
        return 1
    c = constants
    if c.noise_std <= 0.0:
        raise ContractViolation("epoch length formula needs a positive noise level")
    drift = c.map_lipschitz * eta * c.loss_lipschitz * (1.0 + c.map_lipschitz) * lam / (
        1.0 - lam
    ) ** 2
    ratio = c.loss_lipschitz * (c.w1_radius + drift) / (math.sqrt(c.alpha * eta) * c.noise_std)
    if ratio <= 1.0:
        return 1
    return max(1, math.ceil(math.log(ratio) / math.log(1.0 / lam)))


def step_decay_schedule(constants, eps, R_bound, epoch_length="theoretical", seed=0):
    """The halving-step super-epoch ladder reaching mean squared error eps.

    Step sizes eta_k = (alpha / 2 G^2) * 2^{-k}; the first super-epoch runs
    (2 / alpha eta_1) log(2 R / eps) epochs and later ones 2 log(4) / (alpha
    eta_k); the count of super-epochs halves the error budget each time.
    """
    if eps <= 0.0:
        raise ContractViolation("target accuracy must be positive")
    if R_bound <= 0.0:
        raise ContractViolation("initial distance bound must be positive")
    c = constants
    eta1 = (c.alpha / (2.0 * c.grad_lipschitz**2)) * 0.5
    K = max(1, math.ceil(1.0 + math.log2(2.0 * eta1 * c.noise_std**2 / (c.alpha * eps))))
    step_sizes = [(c.alpha / (2.0 * c.grad_lipschitz**2)) * 2.0 ** (-k) for k in range(1, K + 1)]
    counts = [math.ceil((2.0 / (c.alpha * step_sizes[0])) * math.log(2.0 * R_bound / eps))]
    for k in range(1, K):
        counts.append(math.ceil(2.0 * math.log(4.0) / (c.alpha * step_sizes[k])))
    return FOConfig(
        step_sizes=step_sizes,
        epoch_counts=counts,
        epoch_length=epoch_length,
        target_eps=eps,
        seed=seed,
    )


def _initial_point(x1, active_set):
    if x1 is None:
        x = np.zeros(active_set.dim)
    else:
        x = np.atleast_1d(np.asarray(x1, dtype=float))
    if not active_set.contains(x, tol=1e-12):
        raise ContractViolation("initial decision is infeasible for the active set")
    return x


def run_zeroth_order(env, model, constraint_set, config, constants):
    """The one-point bandit method on the shrunken set.

    Per epoch: draw a sphere direction, deploy the perturbed decision for
    the epoch length, sample the environment, form the one-point estimate,
    and project the step onto (1 - delta) X.
    """
    c = constants
    delta = config.delta
    r = constraint_set.inner_radius
    if delta >= r:
        raise ContractViolation("query radius must stay below the inner radius")
    if isinstance(config.epoch_length, str) and c.hessian_lipschitz > 0.0:
        cap = c.alpha / (2.0 * c.hessian_lipschitz)
        if delta > cap * STEP_SLACK:
            raise ContractViolation(
                "query radius exceeds the curvature cap for theoretical epoch lengths"
            )
    env = env.copy()
    rng = np.random.default_rng(config.seed)
    shrunk = constraint_set.scale(1.0 - delta)
    x = _initial_point(config.x1, shrunk)
    d = constraint_set.dim
    traj = Trajectory(mode="zo", seed=config.seed, config_echo=_echo(config))
    for t in range(1, config.total_epochs + 1):
        eta_t = 4.0 / (c.alpha * t)
        n_t = _epoch_length_at(config.epoch_length, t - 1, lambda: zo_epoch_length(c, env.lam, delta, eta_t, d))
        v = sample_unit_sphere(rng, d)
        query = x + delta * v
        env.apply(query, n_t)
        z = env.sample(rng)
        g = zo_gradient(model, x, v, delta, z, d)
        nxt = shrunk.project(x - eta_t * g)
        traj.append(
            epoch=t,
            super_epoch=0,
            step_size=eta_t,
            epoch_length=n_t,
            decision=x,
            sample=z,
            gradient=g,
            post_decision=nxt,
            weights_summary=env.weights(),
            direction=v,
        )
        x = nxt
    traj.final_decision = x
    return traj


def run_first_order(env, model, constraint_set, config, constants):
    """The first-order method: super-epochs at constant step on the full set."""
    c = constants
    cap = c.alpha / (2.0 * c.grad_lipschitz**2)
    for eta in config.step_sizes:
        if eta > cap * STEP_SLACK:
            raise ContractViolation(
                "step size exceeds alpha / (2 G^2); the contraction argument needs it"
            )
    env = env.copy()
    rng = np.random.default_rng(config.seed)
    x = _initial_point(config.x1, constraint_set)
    traj = Trajectory(mode="fo", seed=config.seed, config_echo=_echo(config))
    epoch = 0
    for k, (eta, count) in enumerate(zip(config.step_sizes, config.epoch_counts), start=1):
        n_k = _epoch_length_at(config.epoch_length, k - 1, lambda: fo_epoch_length(c, env.lam, eta))
        for _ in range(count):
            epoch += 1
            env.apply(x, n_k)
            z = env.sample(rng)
            g = fo_gradient(model, env.map, x, z, env.lam, n_k)
            nxt = constraint_set.project(x - eta * g)
            traj.append(
                epoch=epoch,
                super_epoch=k,
                step_size=eta,
                epoch_length=n_k,
                decision=x,
                sample=z,
                gradient=g,
                post_decision=nxt,
                weights_summary=env.weights(),
            )
            x = nxt
    traj.final_decision = x
    return traj


def _epoch_length_at(spec_value, index, theoretical_fn):
    if isinstance(spec_value, str):
        return theoretical_fn()
    if isinstance(spec_value, (list, tuple, np.ndarray)):
        return int(spec_value[index])
    return int(spec_value)


def run_rgd(env, model, constraint_set, eta, n_per_update, T, seed=0, x1=None):
    """Repeated gradient descent: ignores how the distribution moves with x."""
    if eta <= 0.0:
        raise ContractViolation("step size must be positive")
    if n_per_update < 1:
        raise ContractViolation("dynamics steps per update must be >= 1")
    env = env.copy()
    rng = np.random.default_rng(seed)
    x = _initial_point(x1, constraint_set)
    traj = Trajectory(
        mode="rgd",
        seed=seed,
        config_echo={"eta": eta, "n_per_update": n_per_update, "total_epochs": T},
    )
    for t in range(1, T + 1):
        env.apply(x, n_per_update)
        z = env.sample(rng)
        g = model.grad_x(x, z)
        nxt = constraint_set.project(x - eta * g)
        traj.append(
            epoch=t,
            super_epoch=0,
            step_size=eta,
            epoch_length=n_per_update,
            decision=x,
            sample=z,
            gradient=g,
            post_decision=nxt,
            weights_summary=env.weights(),
        )
        x = nxt
    traj.final_decision = x
    return traj


def run_rrm(env, model, constraint_set, n_per_update, T, seed=0, batch_size=512, x1=None):
    """Repeated risk minimization: exact retraining on a fresh sampled batch.

    The recorded sample is the batch mean and the gradient columns are NaN
    (there is no gradient estimate in this baseline).
    """
    if n_per_update < 1:
        raise ContractViolation("dynamics steps per update must be >= 1")
    if batch_size < 1:
        raise ContractViolation("batch size must be >= 1")
    env = env.copy()
    rng = np.random.default_rng(seed)
    x = _initial_point(x1, constraint_set)
    traj = Trajectory(
        mode="rrm",
        seed=seed,
        config_echo={"n_per_update": n_per_update, "total_epochs": T, "batch_size": batch_size},
    )
    nan_grad = np.full(constraint_set.dim, np.nan)
    for t in range(1, T + 1):
        env.apply(x, n_per_update)
        batch = env.sample(rng, size=batch_size)
        nxt = _empirical_argmin(model, constraint_set, batch)
        traj.append(
            epoch=t,
            super_epoch=0,
            step_size=np.nan,
            epoch_length=n_per_update,
            decision=x,
            sample=batch.mean(axis=0),
            gradient=nan_grad,
            post_decision=nxt,
            weights_summary=env.weights(),
        )
        x = nxt
    traj.final_decision = x
    return traj


def _empirical_argmin(model, constraint_set, batch, tol=1e-8, cap=100_000):
    """argmin over the set of the mean loss on a frozen batch."""
    if model.kind == "quadratic-occupancy":
        # the batch enters only through an additive constant; ridge wins
        return constraint_set.project(np.zeros(model.decision_dim))
    phi = batch[:, :-1]
    step = 1.0 / (model.nu + 0.25 * float(np.max(np.sum(phi**2, axis=1))))
    x = np.zeros(model.decision_dim)
    y = batch[:, -1]
    for _ in range(cap):
        s = phi @ x
        g = ((_sigmoid(s) - y)[:, None] * phi).mean(axis=0) + model.nu * x
        nxt = constraint_set.project(x - step * g)
        residual = float(np.linalg.norm(x - nxt)) / step
        x = nxt
        if residual <= tol:
            return x
    raise SolverError("retraining batch argmin did not converge", last_iterate=x)


def _echo(config):
    out = {}
    for key, value in vars(config).items():
        if isinstance(value, np.ndarray):
            out[key] = value.tolist()
        else:
            out[key] = value
    return out
