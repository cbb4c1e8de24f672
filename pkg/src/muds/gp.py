"""Multi-output Gaussian Process regression on an ARD-SE plus white-noise kernel.

One model carries N training inputs (rows of ``xi``), M output channels
sharing a single hyperparameter set and a single Cholesky factorization.
Besides the usual posterior mean/variance it exposes the analytic gradient
of the posterior variance, projection of a query onto the most correlated
training sample, and an in-place kernel-weighted correction of the stored
outputs that leaves the variance manifold untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

GP_FORMAT_VERSION = 1

# Escalating diagonal jitter tried before declaring the Gram matrix non-PD.
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

_LOG_FLOOR = 1e-12  # stand-in for a zero lower bound in log-space optimization


class GramNotPositiveDefinite(RuntimeError):
    """Cholesky failed even after jitter escalation."""


class FitError(RuntimeError):
    """Hyperparameter search produced no finite likelihood.

    ``best`` carries the best (theta-vector, objective) seen before failing,
    or None when every start diverged immediately.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CorrectionRateError(ValueError):
    """A correction increment exceeded the per-tick cap."""


@dataclass(frozen=True)
class Hyperparameters:
    """Kernel parameters: output scale, per-dimension inverse squared
    lengthscales (the diagonal of the ARD metric), and observation noise."""

    sigma_f: float
    theta_diag: np.ndarray
    sigma_n: float

    def __post_init__(self):
        object.__setattr__(self, "theta_diag", np.asarray(self.theta_diag, dtype=float))
        if not self.sigma_f > 0:
            raise ValueError(f"sigma_f must be positive, got {self.sigma_f}")
        if self.theta_diag.ndim != 1 or not np.all(self.theta_diag > 0):
            raise ValueError("theta_diag must be a 1-D vector of positive reals")
        if self.sigma_n < 0:
            raise ValueError(f"sigma_n must be non-negative, got {self.sigma_n}")

    @property
    def input_dim(self) -> int:
        return self.theta_diag.shape[0]

    def lengthscales(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.theta_diag)


@dataclass(frozen=True)
class Bounds:
    """Box constraints for the hyperparameter search, one (lower, upper)
    pair per parameter."""

    sigma_f: tuple[float, float]
    theta_diag: tuple[tuple[float, float], ...]
    sigma_n: tuple[float, float]

    def __post_init__(self):
        for name, (lo, hi) in [("sigma_f", self.sigma_f), ("sigma_n", self.sigma_n)]:
            if lo >= hi:
                raise ValueError(f"{name} bounds must satisfy lower < upper")
        if self.sigma_f[0] <= 0:
            raise ValueError("sigma_f lower bound must be positive")
        if self.sigma_n[0] < 0:
            raise ValueError("sigma_n lower bound must be non-negative")
        for lo, hi in self.theta_diag:
            if lo <= 0 or lo >= hi:
                raise ValueError("theta_diag bounds must satisfy 0 < lower < upper")

    @classmethod
    def default(cls, input_dim, lengthscale=(0.01, 1.0), sigma_f=(1e-3, 10.0),
                sigma_n=(1e-4, 0.1)):
        """Bounds for sub-meter workspaces: lengthscales between 1 cm and 1 m.

        The noise floor keeps the Gram matrix positive definite without jitter.
        """
        lo, hi = lengthscale
        theta = ((1.0 / hi**2, 1.0 / lo**2),) * input_dim
        return cls(sigma_f=tuple(sigma_f), theta_diag=theta, sigma_n=tuple(sigma_n))

    def as_arrays(self):
        lows = np.array([self.sigma_f[0]] + [b[0] for b in self.theta_diag] + [self.sigma_n[0]])
        highs = np.array([self.sigma_f[1]] + [b[1] for b in self.theta_diag] + [self.sigma_n[1]])
        return lows, highs


@dataclass(frozen=True)
class Posterior:
    """Posterior mean over the M channels and the (shared) scalar variance."""

    mean: np.ndarray
    variance: float


def _check_vector(x, dim, name="x"):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"{name} must have shape ({dim},), got {x.shape}")
    return x


def kernel_eval(xi, xj, hp: Hyperparameters, same_index: bool = False) -> float:
    """ARD-SE kernel between two points; the white-noise term is added only
    for identical database indices, never for coincidentally equal coordinates."""
    xi = _check_vector(xi, hp.input_dim, "xi")
    xj = _check_vector(xj, hp.input_dim, "xj")
    d = xi - xj
    value = hp.sigma_f**2 * np.exp(-0.5 * float(d @ (hp.theta_diag * d)))
    if same_index:
        value += hp.sigma_n**2
    return float(value)


def _ard_matrix(xa, xb, hp):
    """Noise-free kernel matrix between two point sets (na x nb)."""
    scaled_a = xa * np.sqrt(hp.theta_diag)
    scaled_b = xb * np.sqrt(hp.theta_diag)
    sq = (
        np.sum(scaled_a**2, axis=1)[:, None]
        + np.sum(scaled_b**2, axis=1)[None, :]
        - 2.0 * scaled_a @ scaled_b.T
    )
    np.maximum(sq, 0.0, out=sq)
    return hp.sigma_f**2 * np.exp(-0.5 * sq)


class GpModel:
    """Fitted GP over a fixed input database.

    Many concurrent readers or one writer: ``apply_correction`` mutates the
    stored outputs and cached weights in place; callers serialize writes.
    """

    def __init__(self, inputs, outputs, hyperparameters: Hyperparameters, bounds=None):
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        outputs = np.asarray(outputs, dtype=float)
        if outputs.ndim == 1:
            outputs = outputs[:, None]
        if inputs.shape[0] != outputs.shape[0]:
            raise ValueError("inputs and outputs must have the same number of rows")
        if inputs.shape[0] < 1:
            raise ValueError("need at least one training sample")
        if hyperparameters.input_dim != inputs.shape[1]:
            raise ValueError("theta_diag length must match input dimension")
        self.inputs = inputs
        self.outputs = outputs
        self.hyperparameters = hyperparameters
        self.bounds = bounds
        self._chol = None
        self._alpha = None
        self._refresh_factorization()

    # -- dimensions ------------------------------------------------------

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.outputs.shape[1]

    @property
    def prior_variance(self) -> float:
        hp = self.hyperparameters
        return hp.sigma_f**2 + hp.sigma_n**2

    # -- factorization ---------------------------------------------------

    def _refresh_factorization(self):
        hp = self.hyperparameters
        gram = _ard_matrix(self.inputs, self.inputs, hp)
        gram[np.diag_indices_from(gram)] += hp.sigma_n**2
        self._chol = _chol_with_jitter(gram)
        self._refresh_weights()

    def _refresh_weights(self):
        self._alpha = cho_solve(self._chol, self.outputs)

    # -- evaluation ------------------------------------------------------

    def _kvec(self, x):
        """Correlation vector against the database, noise term excluded."""
        hp = self.hyperparameters
        d = self.inputs - x[None, :]
        return hp.sigma_f**2 * np.exp(-0.5 * np.sum(d * d * hp.theta_diag[None, :], axis=1))

    def predict(self, x) -> Posterior:
        x = _check_vector(x, self.input_dim)
        kvec = self._kvec(x)
        mean = kvec @ self._alpha
        var = self.prior_variance - float(kvec @ cho_solve(self._chol, kvec))
        return Posterior(mean=mean, variance=max(var, 0.0))

    def variance_gradient(self, x) -> np.ndarray:
        """Analytic gradient of the posterior variance at x.

        Negated, it points toward lower uncertainty; it vanishes both on the
        data (variance minimum) and far away (prior plateau).
        """
        x = _check_vector(x, self.input_dim)
        kvec = self._kvec(x)
        v = cho_solve(self._chol, kvec)
        diff = x[None, :] - self.inputs
        return 2.0 * self.hyperparameters.theta_diag * ((v * kvec) @ diff)

    def predict_full(self, x):
        """(mean, variance, variance gradient) sharing one kernel evaluation.

        Hot path for the control loop; equal to calling predict and
        variance_gradient separately.
        """
        x = _check_vector(x, self.input_dim)
        kvec = self._kvec(x)
        mean = kvec @ self._alpha
        v = cho_solve(self._chol, kvec)
        var = max(self.prior_variance - float(kvec @ v), 0.0)
        diff = x[None, :] - self.inputs
        grad = 2.0 * self.hyperparameters.theta_diag * ((v * kvec) @ diff)
        return mean, var, grad

    def mu_project(self, x):
        """Index and position of the training sample most correlated with x.

        Ties break toward the lowest index.
        """
        x = _check_vector(x, self.input_dim)
        idx = int(np.argmax(self._kvec(x)))
        return idx, self.inputs[idx].copy()

    # -- corrections -----------------------------------------------------

    def apply_correction(self, x, channel: int, eps: float, cap=None):
        """Spread a correction over the output database by kernel correlation.

        Every row i of the chosen channel moves by k(x, xi_i)/sigma_f^2 * eps,
        i.e. the correlation vector normalized to a unit self-correlation.
        Inputs and hyperparameters are untouched, so the posterior variance
        is identical everywhere afterwards.
        """
        if not 0 <= channel < self.output_dim:
            raise ValueError(f"channel {channel} out of range for {self.output_dim} outputs")
        if cap is not None and abs(eps) > cap + 1e-15:
            raise CorrectionRateError(f"correction {eps} exceeds per-tick cap {cap}")
        x = _check_vector(x, self.input_dim)
        spread = self._kvec(x) / self.hyperparameters.sigma_f**2
        self.outputs[:, channel] += spread * eps
        self._refresh_weights()
        return self

    # -- serialization ---------------------------------------------------

    def to_payload(self) -> dict:
        payload = {
            "format_version": GP_FORMAT_VERSION,
            "inputs": self.inputs.tolist(),
            "outputs": self.outputs.tolist(),
            "hyperparameters": {
                "sigma_f": float(self.hyperparameters.sigma_f),
                "theta_diag": self.hyperparameters.theta_diag.tolist(),
                "sigma_n": float(self.hyperparameters.sigma_n),
            },
        }
        if self.bounds is not None:
            payload["bounds"] = {
                "sigma_f": list(self.bounds.sigma_f),
                "theta_diag": [list(b) for b in self.bounds.theta_diag],
                "sigma_n": list(self.bounds.sigma_n),
            }
        else:
            payload["bounds"] = None
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "GpModel":
        version = payload.get("format_version")
        if version != GP_FORMAT_VERSION:
            raise ValueError(f"unsupported GP format version {version!r}")
        hp = Hyperparameters(
            sigma_f=payload["hyperparameters"]["sigma_f"],
            theta_diag=np.array(payload["hyperparameters"]["theta_diag"]),
            sigma_n=payload["hyperparameters"]["sigma_n"],
        )
        bounds = None
        if payload.get("bounds") is not None:
            b = payload["bounds"]
            bounds = Bounds(
                sigma_f=tuple(b["sigma_f"]),
                theta_diag=tuple(tuple(t) for t in b["theta_diag"]),
                sigma_n=tuple(b["sigma_n"]),
            )
        return cls(np.array(payload["inputs"]), np.array(payload["outputs"]), hp, bounds)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_payload(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "GpModel":
        return cls.from_payload(json.loads(Path(path).read_text()))


def _chol_with_jitter(gram):
    base = gram
    for jitter in _JITTERS:
        try:
            if jitter:
                gram = base + jitter * np.eye(base.shape[0])
            return cho_factor(gram, lower=True)
        except np.linalg.LinAlgError:
            continue
    raise GramNotPositiveDefinite(
        f"Gram matrix not positive definite after jitter up to {_JITTERS[-1]}"
    )


# -- hyperparameter fitting ------------------------------------------------


def _nll_and_grad(log_params, inputs, outputs, sq_diffs):
    """Negative log marginal likelihood summed over output channels sharing
    one hyperparameter set, with its gradient in log-parameter space."""
    n, m = outputs.shape
    sigma_f2 = np.exp(2.0 * log_params[0])
    theta = np.exp(log_params[1:-1])
    sigma_n2 = np.exp(2.0 * log_params[-1])

    scaled = np.tensordot(sq_diffs, theta, axes=(2, 0))
    ard = sigma_f2 * np.exp(-0.5 * scaled)
    gram = ard + sigma_n2 * np.eye(n)
    try:
        chol = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError:
        return np.inf, np.zeros_like(log_params)

    alpha = cho_solve(chol, outputs)
    logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
    nll = 0.5 * float(np.sum(outputs * alpha)) + 0.5 * m * logdet \
        + 0.5 * m * n * np.log(2.0 * np.pi)

    # d(-LML)/d theta_j = 0.5 * sum((M K^-1 - A A^T) * dK/dtheta_j)
    kinv = cho_solve(chol, np.eye(n))
    inner = m * kinv - alpha @ alpha.T

    grad = np.empty_like(log_params)
    grad[0] = 0.5 * np.sum(inner * (2.0 * ard))
    for j in range(theta.size):
        dk = ard * (-0.5 * theta[j] * sq_diffs[:, :, j])
        grad[j + 1] = 0.5 * np.sum(inner * dk)
    grad[-1] = 0.5 * np.sum(np.diag(inner)) * 2.0 * sigma_n2
    return nll, grad


def fit(inputs, outputs, bounds=None, seed: int = 0, restarts: int = 5) -> GpModel:
    """Fit hyperparameters by bound-constrained likelihood maximization.

    L-BFGS-B on log-parameters with analytic gradients; the first start sits
    at the geometric midpoint of the bounds and the remaining ones are drawn
    log-uniformly from a seeded RNG, so the result is deterministic per seed.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim == 1:
        outputs = outputs[:, None]
    if bounds is None:
        bounds = Bounds.default(inputs.shape[1])

    lows, highs = bounds.as_arrays()
    log_lows = np.log(np.maximum(lows, _LOG_FLOOR))
    log_highs = np.log(np.maximum(highs, _LOG_FLOOR * 10))
    box = list(zip(log_lows, log_highs))

    diffs = inputs[:, None, :] - inputs[None, :, :]
    sq_diffs = diffs**2

    rng = np.random.default_rng(seed)
    starts = [0.5 * (log_lows + log_highs)]
    for _ in range(max(restarts - 1, 0)):
        starts.append(rng.uniform(log_lows, log_highs))

    best = None
    for start in starts:
        result = minimize(
            _nll_and_grad,
            start,
            args=(inputs, outputs, sq_diffs),
            jac=True,
            method="L-BFGS-B",
            bounds=box,
        )
        if np.isfinite(result.fun) and (best is None or result.fun < best.fun):
            best = result

    if best is None:
        raise FitError("no optimizer start produced a finite likelihood", best=None)

    params = np.clip(np.exp(best.x), lows, highs)
    hp = Hyperparameters(sigma_f=float(params[0]), theta_diag=params[1:-1],
                         sigma_n=float(params[-1]))
    return GpModel(inputs, outputs, hp, bounds=bounds)
