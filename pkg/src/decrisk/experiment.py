"""Config-driven experiment orchestration: build, run seeds, write telemetry.

Configs are TOML (or JSON) with four tables: [experiment] names the scenario,
algorithm, seeds, and output directory; [scenario] and [algorithm] carry
their parameters; [constants] optionally overrides estimated problem
constants. A run manifest echoes every resolved parameter and is itself a
valid config, so re-running a manifest reproduces the telemetry.
"""

import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .algorithms import (
    FOConfig,
    ZOConfig,
    run_first_order,
    run_rgd,
    run_rrm,
    run_zeroth_order,
    step_decay_schedule,
)
from .analysis import oracle_report
from .distributions import BaseDistribution, DistributionMap, EnvironmentState
from .errors import ValidationError
from .geometry import ConstraintSet
from .losses import LossModel, ProblemConstants, compute_constants
from .sfpark import build_group_semi_synthetic, build_semi_synthetic, load_records

SCENARIOS = ("sfpark-block", "sfpark-group", "strategic-classification", "synthetic-quadratic")
ALGORITHMS = ("zo", "fo", "rgd", "rrm")
CONSTANT_FIELDS = (
    "alpha",
    "grad_lipschitz",
    "hessian_lipschitz",
    "loss_lipschitz",
    "loss_bound",
    "noise_std",
    "map_lipschitz",
    "w1_radius",
)


@dataclass
class ExperimentConfig:
    scenario: str
    algorithm: str
    seeds: list
    out_dir: str | None = None
    scenario_params: dict = field(default_factory=dict)
    algorithm_params: dict = field(default_factory=dict)
    constant_overrides: dict = field(default_factory=dict)
    base_path: Path = field(default_factory=Path)

    @classmethod
    def from_dict(cls, data, base_path="."):
        exp = dict(data.get("experiment", {}))
        return cls(
            scenario=exp.get("scenario", ""),
            algorithm=exp.get("algorithm", ""),
            seeds=list(exp.get("seeds", [])),
            out_dir=exp.get("out_dir"),
            scenario_params=dict(data.get("scenario", {})),
            algorithm_params=dict(data.get("algorithm", {})),
            constant_overrides=dict(data.get("constants", {})),
            base_path=Path(base_path),
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.suffix == ".json":
            data = json.loads(path.read_text())
        else:
            data = tomllib.loads(path.read_text())
        if "config" in data and "experiment" in data.get("config", {}):
            # a manifest: re-run its resolved config
            data = data["config"]
        return cls.from_dict(data, base_path=path.parent)

    def to_dict(self):
        return {
            "experiment": {
                "scenario": self.scenario,
                "algorithm": self.algorithm,
                "seeds": list(self.seeds),
                **({"out_dir": self.out_dir} if self.out_dir else {}),
            },
            "scenario": dict(self.scenario_params),
            "algorithm": dict(self.algorithm_params),
            "constants": dict(self.constant_overrides),
        }

    def data_path(self):
        raw = self.scenario_params.get("data")
        if raw is None:
            return None
        path = Path(raw)
        return path if path.is_absolute() else self.base_path / path

    def validate(self):
        """Collect every violation; raise ValidationError when any exist."""
        problems = []
        if self.scenario not in SCENARIOS:
            problems.append(f"unknown scenario {self.scenario!r}")
        if self.algorithm not in ALGORITHMS:
            problems.append(f"unknown algorithm {self.algorithm!r}")
        if not self.seeds:
            problems.append("seeds must be a nonempty list")
        elif not all(isinstance(s, int) for s in self.seeds):
            problems.append("seeds must be integers")
        sp = self.scenario_params
        if self.scenario in ("sfpark-block", "sfpark-group"):
            path = self.data_path()
            if path is None:
                problems.append("sfpark scenarios need a data file")
            elif not path.exists():
                problems.append(f"data file not found: {path}")
            if self.scenario == "sfpark-block" and "block" not in sp:
                problems.append("sfpark-block needs a block id")
            if self.scenario == "sfpark-group" and not sp.get("blocks"):
                problems.append("sfpark-group needs a nonempty blocks list")
            if "window" in sp and len(sp["window"]) != 2:
                problems.append("window must be [start, end]")
        lam_keys = [k for k in ("lambda_override", "lam") if k in sp]
        for key in lam_keys:
            lam = sp[key]
            if not (0.0 <= lam < 1.0):
                problems.append(f"{key} must lie in [0, 1); got {lam}")
        if "nu" in sp and sp["nu"] is not None and sp["nu"] < 0.0:
            problems.append("nu must be nonnegative")
        ap = self.algorithm_params
        if self.algorithm == "zo":
            delta = ap.get("delta")
            if delta is None:
                problems.append("zo needs delta (a number or 'corollary')")
            elif isinstance(delta, str):
                if delta != "corollary":
                    problems.append(f"unknown delta rule {delta!r}")
                elif "eps" not in ap:
                    problems.append("delta='corollary' needs eps")
            elif delta <= 0.0:
                problems.append("delta must be positive")
            if ap.get("total_epochs", 0) < 0:
                problems.append("total_epochs must be >= 0")
        if self.algorithm == "fo":
            explicit = "step_sizes" in ap
            rule = ap.get("step_rule")
            if not explicit and rule not in ("cap", "ladder"):
                problems.append("fo needs step_sizes or step_rule in {'cap','ladder'}")
            if explicit and len(ap.get("epoch_counts", [])) != len(ap["step_sizes"]):
                problems.append("step_sizes and epoch_counts must have equal length")
            if rule == "cap" and "total_epochs" not in ap:
                problems.append("step_rule='cap' needs total_epochs")
            if rule == "ladder" and "eps" not in ap:
                problems.append("step_rule='ladder' needs eps")
        if self.algorithm == "rgd" and ap.get("eta", 1.0) <= 0.0:
            problems.append("rgd eta must be positive")
        if self.algorithm in ("rgd", "rrm") and ap.get("total_epochs", 1) < 1:
            problems.append("total_epochs must be >= 1")
        extra = set(self.constant_overrides) - set(CONSTANT_FIELDS)
        if extra:
            problems.append(f"unknown constants overrides: {sorted(extra)}")
        if problems:
            raise ValidationError(problems)
        return self


def _as_matrix(A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        return A.reshape(1, 1)
    if A.ndim == 1:
        return np.diag(A)
    return A


def _box_from_bounds(bounds, dim):
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim == 1:
        lower = np.full(dim, bounds[0])
        upper = np.full(dim, bounds[1])
    else:
        lower, upper = bounds[0], bounds[1]
    return ConstraintSet.box(lower, upper)


def build_synthetic_quadratic(params):
    """Gaussian (or supplied empirical) base under a linear shift."""
    A = _as_matrix(params.get("A", -0.5))
    data_dim, decision_dim = A.shape
    if "base_samples" in params:
        base = BaseDistribution.empirical(np.asarray(params["base_samples"], dtype=float))
    else:
        mean = np.broadcast_to(
            np.atleast_1d(np.asarray(params.get("base_mean", 0.0), dtype=float)), (data_dim,)
        )
        sd = np.broadcast_to(
            np.atleast_1d(np.asarray(params.get("base_sd", 0.1), dtype=float)), (data_dim,)
        )
        base = BaseDistribution.gaussian(mean, np.diag(sd**2))
    dist_map = DistributionMap(base, A=A)
    env = EnvironmentState(dist_map, base, params.get("lam", 0.5))
    model = LossModel.quadratic_occupancy(
        decision_dim,
        nu=params.get("nu", 1e-3),
        data_dim=data_dim,
        target=params.get("target", 0.7),
    )
    cs = _box_from_bounds(params.get("bounds", (-1.0, 1.0)), decision_dim)
    return env, model, cs, {}


def build_strategic_instance(
    n_features=3,
    n_samples=400,
    epsilon=0.1,
    nu=0.05,
    lam=0.7,
    bound=3.0,
    data_seed=7,
    feature_scale=None,
    mask=None,
):
    """A fixed strategic-classification population with a learnable signal.

    Features are bounded Gaussians, labels follow a logistic ground truth,
    and agents with label 0 best-respond to the deployed classifier.
    """
    rng = np.random.default_rng(data_seed)
    if feature_scale is None:
        feature_scale = 1.0 / math.sqrt(n_features)
    phi = rng.standard_normal((n_samples, n_features)) * feature_scale
    norms = np.linalg.norm(phi, axis=1, keepdims=True)
    phi = np.where(norms > 1.5, phi * (1.5 / norms), phi)  # cap feature norms
    theta = np.full(n_features, 2.0)
    logits = phi @ theta
    y = (rng.uniform(size=n_samples) < 1.0 / (1.0 + np.exp(-logits))).astype(float)
    base = BaseDistribution.empirical(np.column_stack([phi, y]))
    dist_map = DistributionMap(base, epsilon=epsilon, feature_mask=mask)
    env = EnvironmentState(dist_map, base, lam)
    model = LossModel.strategic_logistic(n_features, nu=nu)
    cs = _box_from_bounds((-bound, bound), n_features)
    return env, model, cs


def build_instance(config):
    """(environment, model, constraint set, extra info) for a validated config."""
    sp = config.scenario_params
    if config.scenario == "synthetic-quadratic":
        env, model, cs, info = build_synthetic_quadratic(sp)
        return env, model, cs, info
    if config.scenario == "strategic-classification":
        keys = (
            "n_features",
            "n_samples",
            "epsilon",
            "nu",
            "lam",
            "bound",
            "data_seed",
            "feature_scale",
        )
        env, model, cs = build_strategic_instance(**{k: sp[k] for k in keys if k in sp})
        return env, model, cs, {}
    frame = load_records(config.data_path())
    window = tuple(sp.get("window", (1200, 1500)))
    nu = sp.get("nu", 1e-3)
    if config.scenario == "sfpark-block":
        env, model, cs = build_semi_synthetic(
            frame,
            sp["block"],
            window,
            nu,
            set_bounds=tuple(sp["bounds"]) if "bounds" in sp else None,
            max_rate=sp.get("max_rate", 8.0),
        )
        info = {}
    else:
        env, model, cs, params = build_group_semi_synthetic(
            frame,
            list(sp["blocks"]),
            window,
            nu,
            max_rate=sp.get("max_rate", 8.0),
        )
        info = {"per_block": params}
    if "A_override" in sp:
        A = _as_matrix(sp["A_override"])
        dist_map = DistributionMap(env.map.base, A=A, clip_range=env.map.clip_range)
        env = EnvironmentState(dist_map, env.p0, env.lam)
    if "lambda_override" in sp:
        env = EnvironmentState(env.map, env.p0, sp["lambda_override"])
    return env, model, cs, info


def resolve_constants(config, env, model, cs):
    overrides = dict(config.constant_overrides)
    if set(overrides) >= set(CONSTANT_FIELDS):
        return ProblemConstants(method="override", **{k: overrides[k] for k in CONSTANT_FIELDS})
    rng = np.random.default_rng(config.scenario_params.get("constants_seed", 0))
    return compute_constants(
        model,
        env.map,
        cs,
        rng,
        p0=env.p0,
        noise_std=overrides.get("noise_std"),
        w1_radius=overrides.get("w1_radius"),
    )


def corollary_delta(constants, eps, outer_radius):
    """The query radius the target-accuracy corollary prescribes."""
    a, G = constants.alpha, constants.grad_lipschitz
    return a * math.sqrt(eps / 4.0) / ((a + G) * outer_radius + G)


def resolve_schedule(config, constants, env, model, cs):
    """Explicit algorithm parameters from the config's declarative ones."""
    ap = dict(config.algorithm_params)
    algorithm = config.algorithm
    if algorithm == "zo":
        delta = ap.get("delta")
        if isinstance(delta, str):
            delta = corollary_delta(constants, ap["eps"], cs.outer_radius)
        resolved = {
            "delta": float(delta),
            "total_epochs": int(ap.get("total_epochs", 100)),
            "epoch_length": ap.get("epoch_length", "theoretical"),
        }
        if "x1" in ap:
            resolved["x1"] = list(np.atleast_1d(ap["x1"]))
    elif algorithm == "fo":
        if "step_sizes" in ap:
            steps = [float(s) for s in ap["step_sizes"]]
            counts = [int(t) for t in ap["epoch_counts"]]
        elif ap.get("step_rule") == "cap":
            steps = [constants.alpha / (2.0 * constants.grad_lipschitz**2)]
            counts = [int(ap["total_epochs"])]
        else:
            R_default = cs.outer_radius**2
            ladder = step_decay_schedule(
                constants,
                ap["eps"],
                ap.get("R_bound", R_default),
                epoch_length=ap.get("epoch_length", "theoretical"),
            )
            steps, counts = ladder.step_sizes, ladder.epoch_counts
        resolved = {
            "step_sizes": steps,
            "epoch_counts": counts,
            "epoch_length": ap.get("epoch_length", "theoretical"),
        }
        if "x1" in ap:
            resolved["x1"] = list(np.atleast_1d(ap["x1"]))
    elif algorithm == "rgd":
        resolved = {
            "eta": float(ap.get("eta", 1.0 / constants.grad_lipschitz)),
            "n_per_update": int(ap.get("n_per_update", 1)),
            "total_epochs": int(ap.get("total_epochs", 100)),
        }
    else:
        resolved = {
            "n_per_update": int(ap.get("n_per_update", 1)),
            "total_epochs": int(ap.get("total_epochs", 100)),
            "batch_size": int(ap.get("batch_size", 512)),
        }
    return resolved


def run_algorithm(env, model, cs, constants, algorithm, resolved, seed):
    """Dispatch one seeded run; `resolved` comes from resolve_schedule."""
    if algorithm == "zo":
        cfg = ZOConfig(
            delta=resolved["delta"],
            total_epochs=resolved["total_epochs"],
            epoch_length=resolved["epoch_length"],
            seed=seed,
            x1=resolved.get("x1"),
        )
        return run_zeroth_order(env, model, cs, cfg, constants)
    if algorithm == "fo":
        cfg = FOConfig(
            step_sizes=resolved["step_sizes"],
            epoch_counts=resolved["epoch_counts"],
            epoch_length=resolved["epoch_length"],
            seed=seed,
            x1=resolved.get("x1"),
        )
        return run_first_order(env, model, cs, cfg, constants)
    if algorithm == "rgd":
        return run_rgd(
            env,
            model,
            cs,
            eta=resolved["eta"],
            n_per_update=resolved["n_per_update"],
            T=resolved["total_epochs"],
            seed=seed,
        )
    return run_rrm(
        env,
        model,
        cs,
        n_per_update=resolved["n_per_update"],
        T=resolved["total_epochs"],
        seed=seed,
        batch_size=resolved["batch_size"],
    )


def _seed_worker(payload):
    env, model, cs, constants, algorithm, resolved, seed, x_star, out_dir = payload
    traj = run_algorithm(env, model, cs, constants, algorithm, resolved, seed)
    frame = traj.to_frame(x_star=x_star)
    if out_dir is not None:
        frame.to_csv(Path(out_dir) / f"seed_{seed}.csv", index=False)
    final_dist = float(np.linalg.norm(traj.final_decision - x_star))
    return seed, frame["dist_to_opt"].to_numpy(), traj.final_decision, final_dist


def execute(config, workers=1, seed_offset=0, out_dir=None):
    """Validate, build, run every seed, and write telemetry.

    Writes per-seed trajectory CSVs, summary.csv with the per-epoch mean and
    standard error of the distance to the optimum, and manifest.json echoing
    every resolved parameter. Returns the manifest dict.
    """
    config.validate()
    env, model, cs, info = build_instance(config)
    constants = resolve_constants(config, env, model, cs)
    report = oracle_report(model, env.map, cs)
    x_star = report.x_star
    resolved = resolve_schedule(config, constants, env, model, cs)
    seeds = [int(s) + int(seed_offset) for s in config.seeds]
    out = Path(out_dir) if out_dir else (Path(config.out_dir) if config.out_dir else None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    payloads = [
        (env, model, cs, constants, config.algorithm, resolved, s, x_star, out) for s in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_seed_worker, payloads))
    else:
        results = [_seed_worker(p) for p in payloads]
    results.sort(key=lambda r: seeds.index(r[0]))
    dists = np.stack([r[1] for r in results])
    finals = np.stack([r[2] for r in results])
    final_dists = np.array([r[3] for r in results])
    n_seeds = len(seeds)
    summary = pd.DataFrame(
        {
            "epoch": np.arange(1, dists.shape[1] + 1),
            "mean_dist_to_opt": dists.mean(axis=0),
            "stderr_dist_to_opt": (
                dists.std(axis=0, ddof=1) / math.sqrt(n_seeds) if n_seeds > 1 else 0.0
            ),
        }
    )
    mean_final = finals.mean(axis=0)
    outcome = {
        "final_mean_distance": float(final_dists.mean()),
        "final_distance_per_seed": final_dists.tolist(),
        "mean_final_decision": mean_final.tolist(),
    }
    if model.kind == "quadratic-occupancy" and env.map.mode == "location-scale":
        occ = env.map.mean_at(mean_final)
        outcome["predicted_final_occupancy"] = occ.tolist()
        outcome["occupancy_target"] = model.target
    resolved_config = config.to_dict()
    resolved_config["experiment"]["seeds"] = seeds
    resolved_config["algorithm"] = {
        **resolved_config["algorithm"],
        **{k: v for k, v in resolved.items() if not isinstance(v, np.ndarray)},
    }
    # echo resolved constants so a manifest re-run skips estimation entirely
    resolved_config["constants"] = {k: float(getattr(constants, k)) for k in CONSTANT_FIELDS}
    manifest = {
        "version": __version__,
        "config": resolved_config,
        "constants": {k: getattr(constants, k) for k in CONSTANT_FIELDS},
        "constants_method": constants.method,
        "oracle": report.to_dict(),
        "outcome": outcome,
        "info": info,
    }
    if out is not None:
        summary.to_csv(out / "summary.csv", index=False)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        manifest["out_dir"] = str(out)
    manifest["summary"] = summary
    return manifest


def _set_by_path(data, dotted, value):
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def sweep(config, param, values, workers=1, seed_offset=0, out_dir=None):
    """Grid over one dotted config parameter, e.g. scenario.lam or algorithm.delta."""
    base = config.to_dict()
    root = Path(out_dir) if out_dir else (Path(config.out_dir) if config.out_dir else None)
    rows = []
    manifests = []
    for value in values:
        data = json.loads(json.dumps(base))
        _set_by_path(data, param, value)
        sub_cfg = ExperimentConfig.from_dict(data, base_path=config.base_path)
        sub_out = None if root is None else root / f"{param.replace('.', '_')}={value}"
        manifest = execute(sub_cfg, workers=workers, seed_offset=seed_offset, out_dir=sub_out)
        rows.append(
            {
                "param": param,
                "value": value,
                "final_mean_distance": manifest["outcome"]["final_mean_distance"],
            }
        )
        manifests.append(manifest)
    table = pd.DataFrame(rows)
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        table.to_csv(root / "sweep_summary.csv", index=False)
    return table, manifests
