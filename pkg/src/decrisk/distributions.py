"""Decision-dependent distribution maps and the geometric-decay environment.

The environment state after any sequence of deployments is an exact finite
mixture: a residual weight on the initial distribution p0 plus one component
per distinct deployed decision. Applying the transition for n steps at
decision x multiplies every existing weight by lam**n and gives the new
component weight 1 - lam**n, so sampling from the state is exact with no
particle approximation.
"""

import logging

import numpy as np
import pandas as pd

from .errors import ContractViolation

log = logging.getLogger(__name__)

# components below this weight are dropped and the rest renormalized
PRUNE_EPS = 1e-12


class BaseDistribution:
    """A fixed sampling distribution: stored empirical rows or a Gaussian."""

    def __init__(self, kind, samples=None, mean=None, cov=None):
        if kind not in ("empirical", "gaussian"):
            raise ContractViolation(f"unknown base distribution kind {kind!r}")
        self.kind = kind
        if kind == "empirical":
            samples = np.asarray(samples, dtype=float)
            if samples.ndim == 1:
                samples = samples[:, None]
            if samples.ndim != 2 or samples.shape[0] < 1:
                raise ContractViolation("empirical base needs at least one sample row")
            self.samples = samples
            self._mean = samples.mean(axis=0)
            self.dim = samples.shape[1]
        else:
            mean = np.atleast_1d(np.asarray(mean, dtype=float))
            cov = np.atleast_2d(np.asarray(cov, dtype=float))
            if cov.shape != (mean.size, mean.size):
                raise ContractViolation("covariance shape must match the mean")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ContractViolation("covariance must be symmetric")
            eigs = np.linalg.eigvalsh(cov)
            if eigs.min() < -1e-10:
                raise ContractViolation("covariance must be positive semidefinite")
            self._mean = mean
            self.cov = cov
            # eigendecomposition handles the semidefinite case where Cholesky fails
            w, V = np.linalg.eigh(cov)
            self._sqrt_cov = V @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
            self.dim = mean.size

    @classmethod
    def empirical(cls, samples):
        return cls("empirical", samples=samples)

    @classmethod
    def point_mass(cls, value):
        return cls("empirical", samples=np.atleast_2d(np.asarray(value, dtype=float)))

    @classmethod
    def gaussian(cls, mean, cov):
        return cls("gaussian", mean=mean, cov=cov)

    @classmethod
    def from_csv(cls, path):
        """One sample vector per row; header names the coordinates."""
        frame = pd.read_csv(path)
        return cls.empirical(frame.to_numpy(dtype=float))

    def mean(self):
        return self._mean.copy()

    def sample(self, rng, size=None):
        """One row (size=None) or a (size, dim) array of rows."""
        m = 1 if size is None else int(size)
        if self.kind == "empirical":
            idx = rng.integers(0, self.samples.shape[0], size=m)
            out = self.samples[idx]
        else:
            out = self._mean + rng.standard_normal((m, self.dim)) @ self._sqrt_cov.T
        return out[0] if size is None else out


class DistributionMap:
    """The decision-indexed distribution D(x).

    Location-scale mode draws z = zeta + A x with zeta from the base.
    Strategic mode treats each base row as (features, label): rows with
    label 0 best-respond by shifting masked feature coordinates by
    -epsilon * x, rows with label 1 are returned unchanged.
    """

    def __init__(self, base, A=None, epsilon=None, feature_mask=None, clip_range=None):
        self.base = base
        self.clip_range = clip_range
        self._clip_seen = False
        if A is not None:
            self.mode = "location-scale"
            A = np.atleast_2d(np.asarray(A, dtype=float))
            if A.shape[0] != base.dim:
                raise ContractViolation("shift matrix rows must match the data dimension")
            self.A = A
            self.decision_dim = A.shape[1]
        else:
            if epsilon is None or epsilon < 0.0:
                raise ContractViolation("strategic mode needs epsilon >= 0")
            self.mode = "strategic"
            self.epsilon = float(epsilon)
            n_features = base.dim - 1
            if n_features < 1:
                raise ContractViolation("strategic base rows must pack features plus a label")
            if feature_mask is None:
                feature_mask = np.ones(n_features, dtype=bool)
            self.feature_mask = np.asarray(feature_mask, dtype=bool).reshape(n_features)
            self.decision_dim = n_features
            # worst-case unmasked shift: -epsilon on every feature row
            A = np.zeros((base.dim, n_features))
            A[:n_features, :] = -self.epsilon * np.eye(n_features)
            self.A = A
        self.data_dim = base.dim
        self.op_norm = _power_iteration_norm(self.A)
        self.gamma = self.op_norm  # W1 Lipschitz constant of x -> D(x)

    def _check_decision(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.decision_dim,):
            raise ContractViolation(
                f"decision dimension {x.shape} does not match map dimension {self.decision_dim}"
            )
        return x

    def _clip(self, z):
        if self.clip_range is None:
            return z
        lo, hi = self.clip_range
        clipped = np.clip(z, lo, hi)
        if not self._clip_seen and np.any(clipped != z):
            self._clip_seen = True
            log.warning("samples fell outside [%g, %g] and were clipped", lo, hi)
        return clipped

    def sample_fixed_point(self, x, rng, size=None):
        """Draw from D(x)."""
        x = self._check_decision(x)
        zeta = self.base.sample(rng, size=1 if size is None else size)
        if self.mode == "location-scale":
            out = zeta + self.A @ x
        else:
            out = zeta.copy()
            strategic = out[:, -1] == 0.0
            shift = np.where(self.feature_mask, -self.epsilon * x, 0.0)
            out[strategic, :-1] += shift
        out = self._clip(out)
        return out[0] if size is None else out

    def mean_at(self, x):
        """Analytic mean of D(x); clipping is ignored here."""
        x = self._check_decision(x)
        if self.mode == "location-scale":
            return self.base.mean() + self.A @ x
        if self.base.kind != "empirical":
            raise ContractViolation("strategic mode needs an empirical base")
        out = self.base.samples.copy()
        strategic = out[:, -1] == 0.0
        shift = np.where(self.feature_mask, -self.epsilon * x, 0.0)
        out[strategic, :-1] += shift
        return out.mean(axis=0)

    def jacobian_at(self, z):
        """d z / d x for the sample z: A, or the label-masked strategic shift."""
        if self.mode == "location-scale":
            return self.A
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.shape != (self.data_dim,):
            raise ContractViolation("sample dimension mismatch in jacobian_at")
        J = np.zeros((self.data_dim, self.decision_dim))
        if z[-1] == 0.0:
            d = self.decision_dim
            J[:d, :] = -self.epsilon * np.diag(self.feature_mask.astype(float))
        return J


def _power_iteration_norm(A, rel_tol=1e-10, max_iter=10_000):
    """Operator norm of A by power iteration on A^T A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.any(A):
        return 0.0
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            # started in the null space; perturb and keep going
            v = rng.standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            continue
        new_sigma = float(np.sqrt(norm))
        v = w / norm
        if abs(new_sigma - sigma) <= rel_tol * max(new_sigma, 1e-300):
            return new_sigma
        sigma = new_sigma
    return sigma


class EnvironmentState:
    """The current environment distribution as an exact finite mixture.

    Weights: p0_weight on the initial distribution plus (weight, decision)
    pairs, each meaning that much mass on D(decision). Invariants: weights
    sum to 1 within 1e-12, are nonnegative, equal decisions are merged, and
    weights below PRUNE_EPS are dropped with renormalization.
    """

    def __init__(self, dist_map, p0, lam):
        if not (0.0 <= lam < 1.0):
            raise ContractViolation("decay rate must satisfy 0 <= lam < 1")
        if p0.dim != dist_map.data_dim:
            raise ContractViolation("p0 dimension must match the map's data dimension")
        self.map = dist_map
        self.p0 = p0
        self.lam = float(lam)
        self.p0_weight = 1.0
        self.components = []  # list of [weight, decision array]

    def apply(self, x, n):
        """Advance n environment steps while decision x is deployed."""
        if n < 1:
            raise ContractViolation("number of steps must be >= 1")
        x = self.map._check_decision(x)
        decay = self.lam**n
        fresh = 1.0 - decay
        self.p0_weight *= decay
        for comp in self.components:
            comp[0] *= decay
        for comp in self.components:
            if np.array_equal(comp[1], x):
                comp[0] += fresh
                break
        else:
            self.components.append([fresh, x.copy()])
        self._prune()
        return self

    def _prune(self):
        if self.p0_weight < PRUNE_EPS:
            self.p0_weight = 0.0
        self.components = [c for c in self.components if c[0] >= PRUNE_EPS]
        total = self.p0_weight + sum(c[0] for c in self.components)
        if total <= 0.0:
            raise ContractViolation("all mixture mass pruned; state is invalid")
        self.p0_weight /= total
        for comp in self.components:
            comp[0] /= total

    def weights(self):
        """(p0 weight, [component weights]) in application order."""
        return self.p0_weight, [c[0] for c in self.components]

    def sample(self, rng, size=None):
        """Draw from the mixture: pick a component by weight, then sample it."""
        if size is None:
            u = rng.uniform()
            acc = self.p0_weight
            if u < acc:
                return self.p0.sample(rng)
            for w, x in self.components:
                acc += w
                if u < acc:
                    return self.map.sample_fixed_point(x, rng)
            # weights sum to 1; numeric slack lands on the last component
            return self.map.sample_fixed_point(self.components[-1][1], rng)
        probs = np.array([self.p0_weight] + [c[0] for c in self.components])
        counts = rng.multinomial(int(size), probs / probs.sum())
        parts = []
        if counts[0] > 0:
            parts.append(self.p0.sample(rng, size=counts[0]))
        for (w, x), m in zip(self.components, counts[1:]):
            if m > 0:
                parts.append(self.map.sample_fixed_point(x, rng, size=m))
        out = np.concatenate(parts, axis=0)
        rng.shuffle(out, axis=0)
        return out

    def mean(self):
        """Analytic mixture mean."""
        total = self.p0_weight * self.p0.mean()
        for w, x in self.components:
            total = total + w * self.map.mean_at(x)
        return total

    def copy(self):
        dup = EnvironmentState(self.map, self.p0, self.lam)
        dup.p0_weight = self.p0_weight
        dup.components = [[w, x.copy()] for w, x in self.components]
        return dup


def env_init(dist_map, p0, lam):
    """Fresh state with all mass on the initial distribution."""
    return EnvironmentState(dist_map, p0, lam)
