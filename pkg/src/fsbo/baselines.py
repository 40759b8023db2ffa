"""Reference optimizers: random search and a single-task Matern 5/2 GP.

The vanilla GP works on z-scored labels, maximizes the marginal likelihood
with multi-restart Adam on analytic gradients, and de-standardizes its
predictions. It is the surrogate behind the GP(LHS) / GP(WS) baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .metadata import Task
from .space import SearchSpace

SQRT5 = math.sqrt(5.0)
JITTER = 1e-8
RESTARTS = 5
FIT_STEPS = 200
FIT_LR = 0.05


class GpFitError(RuntimeError):
    pass


def matern52(r, signal_variance: float = 1.0):
    """Matern 5/2 correlation at scaled distance r, times the signal variance."""
    r = np.asarray(r, dtype=np.float64)
    sr = SQRT5 * r
    return signal_variance * (1.0 + sr + sr**2 / 3.0) * np.exp(-sr)


@dataclass(frozen=True)
class MaternGp:
    log_signal_variance: float
    log_lengthscales: np.ndarray  # one per input dimension (ARD)
    log_noise_variance: float
    y_mean: float = 0.0
    y_std: float = 1.0

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def noise_variance(self) -> float:
        return math.exp(self.log_noise_variance)

    def _scaled_diffs(self, X1, X2):
        ls = np.exp(self.log_lengthscales)
        return (X1[:, None, :] - X2[None, :, :]) / ls

    def kernel(self, X1, X2) -> np.ndarray:
        d = self._scaled_diffs(X1, X2)
        r = np.sqrt(np.maximum((d**2).sum(-1), 0.0))
        return matern52(r, self.signal_variance)

    def gram(self, X) -> np.ndarray:
        K = self.kernel(X, X)
        return K + (self.noise_variance + JITTER) * np.eye(len(X))

    def nll(self, X, z) -> float:
        """NLL of standardized labels z."""
        K = self.gram(X)
        cf = cho_factor(K, lower=True)
        alpha = cho_solve(cf, z)
        logdet = 2.0 * np.log(np.diag(cf[0])).sum()
        return float(0.5 * z @ alpha + 0.5 * logdet + 0.5 * len(z) * math.log(2 * math.pi))

    def nll_grad(self, X, z):
        """NLL and gradient over (log sv, log lengthscales, log nv)."""
        n, d = X.shape
        ls = np.exp(self.log_lengthscales)
        diffs = (X[:, None, :] - X[None, :, :]) / ls  # (n, n, d)
        r2 = np.maximum((diffs**2).sum(-1), 0.0)
        r = np.sqrt(r2)
        sv = self.signal_variance
        E = np.exp(-SQRT5 * r)
        K_sig = sv * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * E
        K = K_sig + (self.noise_variance + JITTER) * np.eye(n)
        cf = cho_factor(K, lower=True)
        alpha = cho_solve(cf, z)
        Kinv = cho_solve(cf, np.eye(n))
        logdet = 2.0 * np.log(np.diag(cf[0])).sum()
        value = float(0.5 * z @ alpha + 0.5 * logdet + 0.5 * n * math.log(2 * math.pi))
        # dNLL/dtheta = 0.5 tr((Kinv - alpha alpha^T) dK/dtheta)
        A = Kinv - np.outer(alpha, alpha)
        g_sv = 0.5 * float((A * K_sig).sum())
        # dK/d log ls_j = sv * (5/3) (1 + sqrt5 r) E * diffs_j^2
        base = sv * (5.0 / 3.0) * (1.0 + SQRT5 * r) * E
        g_ls = 0.5 * np.einsum("ij,ij,ijd->d", A, base, diffs**2)
        g_nv = 0.5 * self.noise_variance * float(np.trace(A))
        return value, np.concatenate([[g_sv], g_ls, [g_nv]])

    def predict(self, X_obs, y_obs, X_query):
        """Posterior mean/variance in original label units."""
        X_obs = np.atleast_2d(X_obs)
        X_query = np.atleast_2d(X_query)
        z = (np.asarray(y_obs, dtype=np.float64) - self.y_mean) / self.y_std
        K = self.gram(X_obs)
        cf = cho_factor(K, lower=True)
        Ks = self.kernel(X_obs, X_query)
        alpha = cho_solve(cf, z)
        mean_z = Ks.T @ alpha
        Vt = solve_triangular(cf[0], Ks, lower=True)
        var_z = np.maximum(self.signal_variance - (Vt**2).sum(axis=0), 0.0)
        return self.y_mean + self.y_std * mean_z, (self.y_std**2) * var_z


def _unpack(theta: np.ndarray, d: int, y_mean: float, y_std: float) -> MaternGp:
    return MaternGp(
        log_signal_variance=float(theta[0]),
        log_lengthscales=theta[1 : 1 + d].copy(),
        log_noise_variance=float(theta[1 + d]),
        y_mean=y_mean,
        y_std=y_std,
    )


def fit_vanilla_gp(X, y, rng: np.random.Generator | None = None,
                   restarts: int = RESTARTS, steps: int = FIT_STEPS,
                   lr: float = FIT_LR) -> MaternGp:
    """Multi-restart Adam maximization of the marginal likelihood."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 2:
        raise GpFitError("need >= 2 observations")
    if rng is None:
        rng = np.random.default_rng(0)
    n, d = X.shape
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std == 0.0:
        y_std = 1.0
    z = (y - y_mean) / y_std

    best = None
    best_nll = math.inf
    for restart in range(restarts):
        if restart == 0:
            theta = np.concatenate([[0.0], np.zeros(d), [math.log(1e-2)]])
        else:
            theta = np.concatenate([
                [rng.uniform(-1.0, 1.0)],
                rng.uniform(-2.0, 2.0, size=d),
                [rng.uniform(math.log(1e-4), math.log(1e-1))],
            ])
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        ok = True
        for t in range(1, steps + 1):
            gp = _unpack(theta, d, y_mean, y_std)
            try:
                _, g = gp.nll_grad(X, z)
            except np.linalg.LinAlgError:
                ok = False
                break
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g**2
            mhat = m / (1.0 - 0.9**t)
            vhat = v / (1.0 - 0.999**t)
            theta = theta - lr * mhat / (np.sqrt(vhat) + 1e-8)
            theta[1 + d] = max(theta[1 + d], math.log(1e-8))  # noise floor
        if not ok:
            continue
        gp = _unpack(theta, d, y_mean, y_std)
        try:
            final = gp.nll(X, z)
        except np.linalg.LinAlgError:
            continue
        if final < best_nll:
            best, best_nll = gp, final
    if best is None:
        # every restart failed: fall back to prior defaults
        return _unpack(np.concatenate([[0.0], np.zeros(d), [math.log(1e-2)]]),
                       d, y_mean, y_std)
    return best


def random_search(oracle, budget: int, rng: np.random.Generator,
                  space: SearchSpace | None = None, task: Task | None = None):
    """Uniform search; on a table it draws unevaluated rows without replacement."""
    from .bo import RunHistory
    from .space import sample_uniform

    history = RunHistory()
    if task is not None:
        order = rng.permutation(len(task.records))
        for i in order[:budget]:
            cfg, y = task.records[int(i)]
            history.append(cfg, y, task)
    else:
        if space is None:
            raise ValueError("need a space or a task")
        for _ in range(budget):
            cfg = sample_uniform(space, rng)
            history.append(cfg, float(oracle(cfg)), task)
    return history
