"""Deep-kernel Gaussian process surrogate.

An MLP feature map feeds a base kernel (squared-exponential, Matern 5/2, or
a spectral mixture). Posterior, marginal likelihood, and gradients all go
through Cholesky factorizations; gradients come from reverse-mode autodiff
(torch, float64) and are checked against finite differences in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

torch.set_default_dtype(torch.float64)

JITTER_INIT_FRACTION = 1e-6  # of signal variance
JITTER_MAX = 1e-2
NOISE_FLOOR = 1e-8
VARIANCE_FLOOR = 0.0  # posterior variances clamped here after numerics


class NumericalError(RuntimeError):
    """Cholesky failed even after jitter escalation."""


def _t(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class MlpParams:
    """Feature map weights: ReLU after each hidden layer, linear final layer."""

    weights: tuple[torch.Tensor, ...]  # each (out_dim, in_dim)
    biases: tuple[torch.Tensor, ...]

    def __post_init__(self):
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("weight/bias dims incompatible")
        for w_prev, w_next in zip(self.weights, self.weights[1:]):
            if w_next.shape[1] != w_prev.shape[0]:
                raise ValueError("consecutive layer dims incompatible")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @staticmethod
    def init(input_dim: int, hidden: tuple[int, ...], rng: np.random.Generator) -> "MlpParams":
        """Fan-in-scaled uniform initialization."""
        dims = (input_dim, *hidden)
        weights, biases = [], []
        for d_in, d_out in zip(dims, dims[1:]):
            bound = 1.0 / math.sqrt(d_in)
            weights.append(_t(rng.uniform(-bound, bound, size=(d_out, d_in))))
            biases.append(_t(rng.uniform(-bound, bound, size=d_out)))
        return MlpParams(tuple(weights), tuple(biases))


SM_DEFAULT_COMPONENTS = 4


@dataclass(frozen=True)
class KernelParams:
    log_signal_variance: torch.Tensor  # scalar
    log_lengthscales: torch.Tensor  # (d,) ARD over feature-map outputs, or scalar
    log_noise_variance: torch.Tensor  # scalar
    base_kernel: str = "rbf"  # "rbf" | "matern52" | "spectral"
    # spectral mixture extras (Q components over the lengthscale-scaled features)
    sm_log_weights: torch.Tensor | None = None  # (Q,)
    sm_means: torch.Tensor | None = None  # (Q, d)
    sm_log_variances: torch.Tensor | None = None  # (Q, d)

    @property
    def signal_variance(self) -> torch.Tensor:
        return torch.exp(self.log_signal_variance)

    @property
    def noise_variance(self) -> torch.Tensor:
        return torch.exp(self.log_noise_variance)

    @staticmethod
    def init(feature_dim: int, base_kernel: str = "rbf",
             rng: np.random.Generator | None = None,
             sm_components: int = SM_DEFAULT_COMPONENTS) -> "KernelParams":
        extra = {}
        if base_kernel == "spectral":
            if rng is None:
                rng = np.random.default_rng(0)
            extra = dict(
                sm_log_weights=_t(np.zeros(sm_components)),
                sm_means=_t(rng.uniform(0.0, 1.0, size=(sm_components, feature_dim))),
                sm_log_variances=_t(np.zeros((sm_components, feature_dim))),
            )
        return KernelParams(
            log_signal_variance=_t(0.0),
            log_lengthscales=_t(np.zeros(feature_dim)),
            log_noise_variance=_t(math.log(1e-2)),
            base_kernel=base_kernel,
            **extra,
        )


@dataclass(frozen=True)
class DeepKernelSurrogate:
    mlp: MlpParams
    kernel: KernelParams

    @staticmethod
    def init(input_dim: int, hidden: tuple[int, ...] = (128, 128),
             base_kernel: str = "rbf", seed: int = 0,
             sm_components: int = SM_DEFAULT_COMPONENTS) -> "DeepKernelSurrogate":
        rng = np.random.default_rng(seed)
        mlp = MlpParams.init(input_dim, hidden, rng)
        kern = KernelParams.init(hidden[-1], base_kernel, rng, sm_components)
        return DeepKernelSurrogate(mlp, kern)

    # --- flat parameter dict, used by the optimizer and checkpoints ---

    def to_param_dict(self) -> dict[str, torch.Tensor]:
        params = {}
        for i, (w, b) in enumerate(zip(self.mlp.weights, self.mlp.biases)):
            params[f"mlp.w{i}"] = w
            params[f"mlp.b{i}"] = b
        params["kern.log_signal_variance"] = self.kernel.log_signal_variance
        params["kern.log_lengthscales"] = self.kernel.log_lengthscales
        params["kern.log_noise_variance"] = self.kernel.log_noise_variance
        if self.kernel.base_kernel == "spectral":
            params["kern.sm_log_weights"] = self.kernel.sm_log_weights
            params["kern.sm_means"] = self.kernel.sm_means
            params["kern.sm_log_variances"] = self.kernel.sm_log_variances
        return params

    def with_params(self, params: dict[str, torch.Tensor]) -> "DeepKernelSurrogate":
        n_layers = len(self.mlp.weights)
        mlp = MlpParams(
            tuple(params[f"mlp.w{i}"] for i in range(n_layers)),
            tuple(params[f"mlp.b{i}"] for i in range(n_layers)),
        )
        kern = replace(
            self.kernel,
            log_signal_variance=params["kern.log_signal_variance"],
            log_lengthscales=params["kern.log_lengthscales"],
            log_noise_variance=params["kern.log_noise_variance"],
            **(
                dict(
                    sm_log_weights=params["kern.sm_log_weights"],
                    sm_means=params["kern.sm_means"],
                    sm_log_variances=params["kern.sm_log_variances"],
                )
                if self.kernel.base_kernel == "spectral"
                else {}
            ),
        )
        return DeepKernelSurrogate(mlp, kern)


@dataclass(frozen=True)
class PosteriorPrediction:
    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None


def feature_map(x_enc, mlp: MlpParams) -> torch.Tensor:
    """Forward pass; accepts a single vector or a (n, d) batch."""
    h = _t(x_enc)
    single = h.dim() == 1
    if single:
        h = h.unsqueeze(0)
    if h.shape[1] != mlp.input_dim:
        raise ValueError(f"expected input dim {mlp.input_dim}, got {h.shape[1]}")
    n = len(mlp.weights)
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w.T + b
        if i < n - 1:
            h = torch.relu(h)
    return h.squeeze(0) if single else h


def _sq_dists(s1: torch.Tensor, s2: torch.Tensor) -> torch.Tensor:
    # explicit expansion instead of cdist: keeps gradients finite at r = 0
    d2 = (s1 * s1).sum(1).unsqueeze(1) + (s2 * s2).sum(1).unsqueeze(0) - 2.0 * s1 @ s2.T
    return torch.clamp(d2, min=0.0)


def _base_kernel_matrix(z1: torch.Tensor, z2: torch.Tensor, kern: KernelParams) -> torch.Tensor:
    ls = torch.exp(kern.log_lengthscales)
    s1 = z1 / ls
    s2 = z2 / ls
    sf2 = kern.signal_variance
    if kern.base_kernel == "rbf":
        return sf2 * torch.exp(-0.5 * _sq_dists(s1, s2))
    if kern.base_kernel == "matern52":
        # tiny clamp keeps d(sqrt)/d(d2) finite on the diagonal
        r = torch.sqrt(torch.clamp(_sq_dists(s1, s2), min=1e-24))
        sr = math.sqrt(5.0) * r
        return sf2 * (1.0 + sr + sr.pow(2) / 3.0) * torch.exp(-sr)
    if kern.base_kernel == "spectral":
        # weights normalized so k(z,z) = signal variance
        w = torch.softmax(kern.sm_log_weights, dim=0)
        tau = s1.unsqueeze(1) - s2.unsqueeze(0)  # (n1, n2, d)
        v = torch.exp(kern.sm_log_variances)  # (Q, d)
        out = torch.zeros(s1.shape[0], s2.shape[0], dtype=torch.float64)
        for q in range(w.shape[0]):
            decay = torch.exp(-2.0 * math.pi**2 * (tau.pow(2) * v[q]).sum(-1))
            wave = torch.cos(2.0 * math.pi * (tau * kern.sm_means[q]).sum(-1))
            out = out + w[q] * decay * wave
        return sf2 * out
    raise ValueError(f"unknown base kernel {kern.base_kernel!r}")


def kernel_matrix(X1_enc, X2_enc, surrogate: DeepKernelSurrogate) -> torch.Tensor:
    """Noise-free deep-kernel cross covariance k(phi(X1), phi(X2))."""
    z1 = feature_map(_t(X1_enc), surrogate.mlp)
    z2 = feature_map(_t(X2_enc), surrogate.mlp)
    return _base_kernel_matrix(z1, z2, surrogate.kernel)


def gram(X_enc, surrogate: DeepKernelSurrogate,
         jitter_scale: float = JITTER_INIT_FRACTION) -> torch.Tensor:
    """Training covariance: kernel + (noise + jitter) on the diagonal.

    Jitter is a fraction of the signal variance and stays differentiable, so
    analytic gradients agree with finite differences of this exact formula.
    Symmetry is exact: the upper triangle is computed and mirrored.
    """
    K = kernel_matrix(X_enc, X_enc, surrogate)
    K = torch.triu(K) + torch.triu(K, diagonal=1).T
    noise = torch.clamp(surrogate.kernel.noise_variance, min=NOISE_FLOOR)
    jitter = jitter_scale * surrogate.kernel.signal_variance
    return K + (noise + jitter) * torch.eye(K.shape[0], dtype=torch.float64)


def _cholesky_with_jitter(X_enc, surrogate) -> tuple[torch.Tensor, torch.Tensor]:
    jitter_scale = JITTER_INIT_FRACTION
    while jitter_scale <= JITTER_MAX:
        K = gram(X_enc, surrogate, jitter_scale=jitter_scale)
        L, info = torch.linalg.cholesky_ex(K)
        if int(info) == 0 and bool(torch.isfinite(L).all()):
            return K, L
        jitter_scale *= 10.0
    raise NumericalError("Cholesky failed after jitter escalation")


def posterior(surrogate: DeepKernelSurrogate, observations, X_query,
              full_covariance: bool = False) -> PosteriorPrediction:
    """Exact GP posterior at the query points given (X, y) observations.

    With no observations this is the prior: zero mean, k(x,x) variance.
    """
    Xq = np.atleast_2d(np.asarray(X_query, dtype=np.float64))
    with torch.no_grad():
        Kss = kernel_matrix(Xq, Xq, surrogate)
        if observations is None or len(observations[1]) == 0:
            mean = np.zeros(Xq.shape[0])
            var = np.clip(torch.diagonal(Kss).numpy(), VARIANCE_FLOOR, None)
            cov = Kss.numpy() if full_covariance else None
            return PosteriorPrediction(mean, var, cov)
        X_obs, y_obs = observations
        X_obs = np.atleast_2d(np.asarray(X_obs, dtype=np.float64))
        y = _t(np.asarray(y_obs, dtype=np.float64))
        _, L = _cholesky_with_jitter(X_obs, surrogate)
        Ks = kernel_matrix(X_obs, Xq, surrogate)  # (n, m)
        alpha = torch.cholesky_solve(y.unsqueeze(1), L)
        mean = (Ks.T @ alpha).squeeze(1)
        V = torch.linalg.solve_triangular(L, Ks, upper=False)
        if full_covariance:
            cov = Kss - V.T @ V
            var = torch.clamp(torch.diagonal(cov), min=VARIANCE_FLOOR)
            return PosteriorPrediction(mean.numpy(), var.numpy(), cov.numpy())
        var = torch.clamp(torch.diagonal(Kss) - V.pow(2).sum(0), min=VARIANCE_FLOOR)
        return PosteriorPrediction(mean.numpy(), var.numpy(), None)


def _nll_torch(surrogate: DeepKernelSurrogate, X_enc, y: torch.Tensor) -> torch.Tensor:
    _, L = _cholesky_with_jitter(X_enc, surrogate)
    alpha = torch.cholesky_solve(y.unsqueeze(1), L).squeeze(1)
    n = y.shape[0]
    quad = 0.5 * torch.dot(y, alpha)
    logdet = torch.log(torch.diagonal(L)).sum()
    return quad + logdet + 0.5 * n * math.log(2.0 * math.pi)


def nll(surrogate: DeepKernelSurrogate, X_enc, y) -> float:
    """Negative log marginal likelihood, full constant included."""
    with torch.no_grad():
        return float(_nll_torch(surrogate, X_enc, _t(y)))


def nll_grad(surrogate: DeepKernelSurrogate, X_enc, y) -> tuple[float, dict[str, torch.Tensor]]:
    """NLL and its gradient with respect to every MLP and kernel parameter."""
    params = {k: v.detach().clone().requires_grad_(True)
              for k, v in surrogate.to_param_dict().items()}
    s = surrogate.with_params(params)
    loss = _nll_torch(s, X_enc, _t(y))
    grads = torch.autograd.grad(loss, list(params.values()))
    return float(loss.detach()), {k: g.detach() for k, g in zip(params, grads)}


@dataclass
class AdamState:
    """Standard Adam moments, one slot per named parameter."""

    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    t: int = 0


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
              state: AdamState, lr: float | dict[str, float]) -> tuple[dict[str, torch.Tensor], AdamState]:
    """One Adam descent step. `lr` may be a scalar or a per-parameter map."""
    new_params = {}
    new_m, new_v = {}, {}
    t = state.t + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.m.get(name, torch.zeros_like(p))
            v = state.v.get(name, torch.zeros_like(p))
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g.pow(2)
            step_lr = lr[name] if isinstance(lr, dict) else lr
            p_new = p - step_lr * (m / bc1) / (torch.sqrt(v / bc2) + ADAM_EPS)
            new_params[name] = p_new
            new_m[name] = m
            new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


def _apply_noise_floor(params: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    out = dict(params)
    out["kern.log_noise_variance"] = torch.clamp(
        params["kern.log_noise_variance"], min=math.log(NOISE_FLOOR)
    )
    return out


@dataclass(frozen=True)
class FineTuneResult:
    surrogate: DeepKernelSurrogate
    failed: bool  # True if numerics failed and the checkpoint came back untouched
    nll_trace: tuple[float, ...] = ()


def fine_tune(surrogate: DeepKernelSurrogate, X_enc, y,
              steps: int = 100, lr: float = 1e-3) -> FineTuneResult:
    """Full-batch Adam on the target observations, starting at the checkpoint.

    No label augmentation here; the checkpoint surrogate is never mutated.
    """
    X_enc = np.atleast_2d(np.asarray(X_enc, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("fine_tune needs at least one observation")
    params = surrogate.to_param_dict()
    state = AdamState()
    current = surrogate
    trace = []
    try:
        for _ in range(steps):
            loss, grads = nll_grad(current, X_enc, y)
            trace.append(loss)
            params, state = adam_step(params, grads, state, lr)
            params = _apply_noise_floor(params)
            current = surrogate.with_params(params)
            if not all(torch.isfinite(v).all() for v in params.values()):
                return FineTuneResult(surrogate, failed=True, nll_trace=tuple(trace))
    except NumericalError:
        return FineTuneResult(surrogate, failed=True, nll_trace=tuple(trace))
    return FineTuneResult(current, failed=False, nll_trace=tuple(trace))
