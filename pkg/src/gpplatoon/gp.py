"""Gaussian process regression with a squared-exponential ARD kernel.

Provides exact GP regression (analytic-gradient hyperparameter training on
the log marginal likelihood), a fully-independent-conditional (FIC) sparse
approximation whose prediction cost depends only on the number of inducing
inputs, and the standard-normal quantile used for probabilistic constraint
tightening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

# Added to kernel diagonals before factorization; below all test tolerances.
JITTER = 1e-10


class IllConditionedKernelError(RuntimeError):
    """Raised when the regularized kernel matrix cannot be factorized."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelHyper:
    """Hyperparameters of the squared-exponential ARD kernel.

    ``length_scales`` holds the diagonal of the scaling matrix that divides
    squared coordinate differences, i.e. k(x, y) =
    signal_variance * exp(-0.5 * sum_d (x_d - y_d)**2 / length_scales[d]).
    """

    signal_variance: float
    length_scales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError("signal_variance must be positive and finite")
        if not (np.isfinite(self.noise_variance) and self.noise_variance > 0):
            raise ValueError("noise_variance must be positive and finite")
        if ls.ndim != 1 or ls.size == 0 or not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("length_scales must be a vector of positive finite reals")

    @property
    def n_dims(self) -> int:
        return self.length_scales.size

    def to_log_vector(self) -> np.ndarray:
        return np.log(
            np.concatenate(
                [[self.signal_variance], self.length_scales, [self.noise_variance]]
            )
        )

    @classmethod
    def from_log_vector(cls, theta: np.ndarray) -> "KernelHyper":
        v = np.exp(np.asarray(theta, dtype=float))
        return cls(signal_variance=float(v[0]), length_scales=v[1:-1],
                   noise_variance=float(v[-1]))


@dataclass(frozen=True)
class Dataset:
    """Regression dataset: one input row per target value."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_1d(np.asarray(self.targets, dtype=float))
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        if x.ndim != 2 or y.ndim != 1:
            raise ValueError("inputs must be a matrix and targets a vector")
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"row count mismatch: {x.shape[0]} inputs vs {y.shape[0]} targets"
            )
        if x.shape[0] < 1:
            raise ValueError("dataset must contain at least one point")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_dims(self) -> int:
        return self.inputs.shape[1]


def save_dataset_csv(data: Dataset, path) -> None:
    """Write a dataset as CSV with header a1,...,ad,g."""
    d = data.n_dims
    header = ",".join(f"a{i + 1}" for i in range(d)) + ",g"
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row, g in zip(data.inputs, data.targets):
            fh.write(",".join(_fmt17(v) for v in row) + "," + _fmt17(g) + "\n")


def load_dataset_csv(path) -> Dataset:
    """Read a dataset written by :func:`save_dataset_csv`."""
    with open(path, "r") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = lines[0].split(",")
    if header[-1] != "g" or any(not h.startswith("a") for h in header[:-1]):
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ValueError(f"{path}:{i}: expected {len(header)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ValueError(f"{path}:{i}: {exc}") from None
    arr = np.asarray(rows)
    return Dataset(inputs=arr[:, :-1], targets=arr[:, -1])


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------


def kernel_eval(x1, x2, hyper: KernelHyper) -> float:
    """Squared-exponential ARD kernel between two points."""
    a = np.atleast_1d(np.asarray(x1, dtype=float))
    b = np.atleast_1d(np.asarray(x2, dtype=float))
    if a.shape != b.shape or a.size != hyper.n_dims:
        raise ValueError(
            f"dimension mismatch: {a.shape} vs {b.shape} with "
            f"{hyper.n_dims} length scales"
        )
    r2 = np.sum((a - b) ** 2 / hyper.length_scales)
    return float(hyper.signal_variance * math.exp(-0.5 * r2))


def _kernel_matrix(a: np.ndarray, b: np.ndarray, hyper: KernelHyper) -> np.ndarray:
    """Kernel cross-covariance between row sets ``a`` (n,d) and ``b`` (m,d)."""
    inv = 1.0 / np.sqrt(hyper.length_scales)
    sa = a * inv
    sb = b * inv
    r2 = (
        np.sum(sa**2, axis=1)[:, None]
        + np.sum(sb**2, axis=1)[None, :]
        - 2.0 * sa @ sb.T
    )
    np.maximum(r2, 0.0, out=r2)
    return hyper.signal_variance * np.exp(-0.5 * r2)


# ---------------------------------------------------------------------------
# exact GP
# ---------------------------------------------------------------------------


def _factorize(data: Dataset, hyper: KernelHyper):
    """Cholesky factor of (K + (noise+jitter) I) and the weight vector."""
    k = _kernel_matrix(data.inputs, data.inputs, hyper)
    k[np.diag_indices_from(k)] += hyper.noise_variance + JITTER
    try:
        chol = cholesky(k, lower=True)
    except np.linalg.LinAlgError:
        raise IllConditionedKernelError(
            "kernel matrix not positive definite for "
            f"signal_variance={hyper.signal_variance:g}, "
            f"length_scales={np.array2string(hyper.length_scales, precision=3)}, "
            f"noise_variance={hyper.noise_variance:g}"
        ) from None
    alpha = cho_solve((chol, True), data.targets)
    return chol, alpha


def log_marginal_likelihood(data: Dataset, hyper: KernelHyper):
    """Log marginal likelihood and its gradient over log-hyperparameters.

    Returns ``(value, grad)`` where ``grad`` is ordered as
    [log signal_variance, log length_scales..., log noise_variance].
    """
    n = data.n
    k = _kernel_matrix(data.inputs, data.inputs, hyper)
    c = k.copy()
    c[np.diag_indices_from(c)] += hyper.noise_variance + JITTER
    try:
        chol = cholesky(c, lower=True)
    except np.linalg.LinAlgError:
        raise IllConditionedKernelError(
            "kernel matrix not positive definite for "
            f"signal_variance={hyper.signal_variance:g}, "
            f"length_scales={np.array2string(hyper.length_scales, precision=3)}, "
            f"noise_variance={hyper.noise_variance:g}"
        ) from None
    alpha = cho_solve((chol, True), data.targets)
    value = (
        -0.5 * float(data.targets @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * n * math.log(2.0 * math.pi)
    )

    # dLML/dtheta = 0.5 tr((alpha alpha' - C^-1) dC/dtheta)
    cinv = cho_solve((chol, True), np.eye(n))
    m = np.outer(alpha, alpha) - cinv
    grad = np.empty(hyper.n_dims + 2)
    grad[0] = 0.5 * float(np.sum(m * k))
    x = data.inputs
    for d in range(hyper.n_dims):
        sqd = (x[:, d, None] - x[None, :, d]) ** 2
        dk = k * (0.5 * sqd / hyper.length_scales[d])
        grad[1 + d] = 0.5 * float(np.sum(m * dk))
    grad[-1] = 0.5 * hyper.noise_variance * float(np.trace(m))
    return value, grad


@dataclass(frozen=True)
class GpModel:
    """Exact GP conditioned on a dataset, with cached factorization."""

    dataset: Dataset
    hyper: KernelHyper
    chol_factor: np.ndarray
    alpha: np.ndarray
    warning: bool = False

    @classmethod
    def from_data(cls, data: Dataset, hyper: KernelHyper, warning: bool = False):
        if data.n_dims != hyper.n_dims:
            raise ValueError(
                f"dataset has {data.n_dims} input dims but hyper has {hyper.n_dims}"
            )
        chol, alpha = _factorize(data, hyper)
        return cls(dataset=data, hyper=hyper, chol_factor=chol, alpha=alpha,
                   warning=warning)

    def predict(self, x):
        """Posterior (mean, variance) at a single query point."""
        kx = _kernel_matrix(
            np.asarray(x, dtype=float).reshape(1, -1), self.dataset.inputs, self.hyper
        )[0]
        mean = float(kx @ self.alpha)
        v = solve_triangular(self.chol_factor, kx, lower=True)
        var = self.hyper.signal_variance - float(v @ v)
        return mean, max(var, 0.0)

    def predict_batch(self, xs):
        """Posterior means and variances at query rows ``xs`` (m, d)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        kx = _kernel_matrix(self.dataset.inputs, xs, self.hyper)
        means = kx.T @ self.alpha
        v = solve_triangular(self.chol_factor, kx, lower=True)
        variances = self.hyper.signal_variance - np.sum(v * v, axis=0)
        return means, np.maximum(variances, 0.0)


def predict_exact(model: GpModel, x):
    """Posterior (mean, variance) of an exact GP at a query point."""
    return model.predict(x)


@dataclass(frozen=True)
class TrainOpts:
    """Settings for log-marginal-likelihood ascent over log-hyperparameters."""

    max_iter: int = 500
    grad_tol: float = 1e-6
    noise_floor: float = 1e-10


def train_exact(data: Dataset, init: KernelHyper, opts: TrainOpts | None = None) -> GpModel:
    """Maximize the log marginal likelihood starting from ``init``.

    Never returns a model worse than the initial hyperparameters; optimizer
    failure falls back to the best evaluated iterate with ``warning`` set.
    """
    opts = opts or TrainOpts()
    if data.n_dims != init.n_dims:
        raise ValueError("init length_scales dimension does not match data")

    theta0 = init.to_log_vector()
    best = {"nll": np.inf, "theta": theta0}

    def objective(theta):
        try:
            value, grad = log_marginal_likelihood(data, KernelHyper.from_log_vector(theta))
        except IllConditionedKernelError:
            return 1e12, np.zeros_like(theta)
        if -value < best["nll"]:
            best["nll"] = -value
            best["theta"] = theta.copy()
        return -value, -grad

    nll0, _ = objective(theta0)
    lo = np.full(theta0.size, -30.0)
    hi = np.full(theta0.size, 30.0)
    lo[-1] = math.log(opts.noise_floor)
    res = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(lo, hi)),
        options={"maxiter": opts.max_iter, "gtol": opts.grad_tol, "ftol": 1e-12},
    )
    warning = not res.success
    theta = best["theta"] if best["nll"] <= nll0 else theta0
    if best["nll"] > nll0:
        warning = True
    return GpModel.from_data(data, KernelHyper.from_log_vector(theta), warning=warning)


# ---------------------------------------------------------------------------
# FIC sparse approximation
# ---------------------------------------------------------------------------


def _fic_factors(data: Dataset, hyper: KernelHyper, inducing: np.ndarray):
    """Shared FIC factorizations.

    Returns (chol_zz, v, lam, chol_cap) where v = chol_zz^-1 K_zx,
    lam is the FIC diagonal (residual diag + noise) and
    cap = I + v diag(1/lam) v'.
    """
    kzz = _kernel_matrix(inducing, inducing, hyper)
    kzz[np.diag_indices_from(kzz)] += JITTER
    try:
        chol_zz = cholesky(kzz, lower=True)
    except np.linalg.LinAlgError:
        raise IllConditionedKernelError(
            "inducing-point kernel matrix not positive definite"
        ) from None
    kzx = _kernel_matrix(inducing, data.inputs, hyper)
    v = solve_triangular(chol_zz, kzx, lower=True)
    resid = hyper.signal_variance - np.sum(v * v, axis=0)
    lam = np.maximum(resid, 0.0) + hyper.noise_variance + JITTER
    m = inducing.shape[0]
    cap = np.eye(m) + (v / lam) @ v.T
    chol_cap = cholesky(cap, lower=True)
    return chol_zz, v, lam, chol_cap


def fic_log_marginal_likelihood(data: Dataset, hyper: KernelHyper,
                                inducing: np.ndarray) -> float:
    """Marginal likelihood of the FIC approximation (Nystrom + diagonal)."""
    chol_zz, v, lam, chol_cap = _fic_factors(data, hyper, inducing)
    y = data.targets
    w = v @ (y / lam)
    t = solve_triangular(chol_cap, w, lower=True)
    quad = float(y @ (y / lam)) - float(t @ t)
    logdet = float(np.sum(np.log(lam))) + 2.0 * float(
        np.sum(np.log(np.diag(chol_cap)))
    )
    return -0.5 * quad - 0.5 * logdet - 0.5 * data.n * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SparseGpModel:
    """FIC sparse GP: prediction cost depends only on the inducing count."""

    inducing: np.ndarray
    hyper: KernelHyper
    chol_inducing: np.ndarray
    chol_cap: np.ndarray
    mean_weights: np.ndarray

    @classmethod
    def from_inducing(cls, data: Dataset, hyper: KernelHyper, inducing: np.ndarray):
        inducing = np.atleast_2d(np.asarray(inducing, dtype=float))
        chol_zz, v, lam, chol_cap = _fic_factors(data, hyper, inducing)
        w = v @ (data.targets / lam)
        mean_weights = cho_solve((chol_cap, True), w)
        return cls(inducing=inducing, hyper=hyper, chol_inducing=chol_zz,
                   chol_cap=chol_cap, mean_weights=mean_weights)

    @property
    def n_inducing(self) -> int:
        return self.inducing.shape[0]

    def predict(self, x):
        """Posterior (mean, variance) at a single query point."""
        kz = _kernel_matrix(
            self.inducing, np.asarray(x, dtype=float).reshape(1, -1), self.hyper
        )[:, 0]
        u = solve_triangular(self.chol_inducing, kz, lower=True)
        mean = float(u @ self.mean_weights)
        t = solve_triangular(self.chol_cap, u, lower=True)
        var = self.hyper.signal_variance - float(u @ u) + float(t @ t)
        return mean, max(var, 0.0)

    def predict_batch(self, xs):
        """Posterior means and variances at query rows ``xs`` (m, d)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        kz = _kernel_matrix(self.inducing, xs, self.hyper)
        u = solve_triangular(self.chol_inducing, kz, lower=True)
        means = u.T @ self.mean_weights
        t = solve_triangular(self.chol_cap, u, lower=True)
        variances = self.hyper.signal_variance - np.sum(u * u, axis=0) + np.sum(t * t, axis=0)
        return means, np.maximum(variances, 0.0)


def predict_sparse(model: SparseGpModel, x):
    """Posterior (mean, variance) of a sparse GP at a query point."""
    return model.predict(x)


def _kmeans(points: np.ndarray, k: int, seed: int, iters: int = 50) -> np.ndarray:
    """Deterministic k-means++ centroids over input rows."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = points[rng.integers(n, size=k - j)]
            break
        centers[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    for _ in range(iters):
        d = (
            np.sum(points**2, axis=1)[:, None]
            - 2.0 * points @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        labels = np.argmin(d, axis=1)
        new = centers.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new[j] = points[mask].mean(axis=0)
            else:
                new[j] = points[np.argmax(np.min(d, axis=1))]
        if np.allclose(new, centers):
            break
        centers = new
    return centers


@dataclass(frozen=True)
class SparseOpts:
    """Settings for inducing-input initialization and refinement."""

    optimize: bool = True
    max_iter: int = 50
    seed: int = 0
    init: object = "kmeans"  # "kmeans", "subset", or an explicit (m, d) array


def build_sparse(model: GpModel, m: int = 20, opts: SparseOpts | None = None) -> SparseGpModel:
    """Build a FIC sparse model from a trained exact GP.

    Inducing inputs start from centroids (or a subset) of the training inputs
    and are refined by ascent on the FIC marginal likelihood; kernel
    hyperparameters are inherited unchanged from the exact model.
    """
    opts = opts or SparseOpts()
    data = model.dataset
    if not 1 <= m <= data.n:
        raise ValueError(f"inducing count m={m} must satisfy 1 <= m <= n={data.n}")

    if isinstance(opts.init, np.ndarray):
        z0 = np.atleast_2d(np.asarray(opts.init, dtype=float)).copy()
        if z0.shape != (m, data.n_dims):
            raise ValueError(f"explicit inducing inputs must have shape ({m}, {data.n_dims})")
    elif opts.init == "subset":
        rng = np.random.default_rng(opts.seed)
        z0 = data.inputs[rng.choice(data.n, size=m, replace=False)].copy()
    elif opts.init == "kmeans":
        z0 = _kmeans(data.inputs, m, seed=opts.seed)
    else:
        raise ValueError(f"unknown inducing initialization {opts.init!r}")

    z = z0
    if opts.optimize:
        shape = z0.shape
        best = {"nll": np.inf, "z": z0.ravel().copy()}

        def objective(zflat):
            try:
                value = fic_log_marginal_likelihood(
                    data, model.hyper, zflat.reshape(shape)
                )
            except IllConditionedKernelError:
                return 1e12
            if -value < best["nll"]:
                best["nll"] = -value
                best["z"] = zflat.copy()
            return -value

        minimize(
            objective,
            z0.ravel(),
            method="L-BFGS-B",
            options={"maxiter": opts.max_iter, "ftol": 1e-12},
        )
        z = best["z"].reshape(shape)

    return SparseGpModel.from_inducing(data, model.hyper, z)


# ---------------------------------------------------------------------------
# standard-normal quantile
# ---------------------------------------------------------------------------

# Acklam's rational approximation of the inverse normal CDF, followed by one
# Halley refinement step through erfc.
_QA = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
       1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_QB = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
       6.680131188771972e+01, -1.328068155288572e+01)
_QC = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
       -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_QD = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
       3.754408661907416e+00)
_Q_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF, absolute error below 1e-8."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if p < _Q_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_QC[0] * q + _QC[1]) * q + _QC[2]) * q + _QC[3]) * q + _QC[4]) * q + _QC[5])
             / ((((_QD[0] * q + _QD[1]) * q + _QD[2]) * q + _QD[3]) * q + 1.0))
    elif p <= 1.0 - _Q_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_QA[0] * r + _QA[1]) * r + _QA[2]) * r + _QA[3]) * r + _QA[4]) * r + _QA[5]) * q
             / (((((_QB[0] * r + _QB[1]) * r + _QB[2]) * r + _QB[3]) * r + _QB[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_QC[0] * q + _QC[1]) * q + _QC[2]) * q + _QC[3]) * q + _QC[4]) * q + _QC[5])
              / ((((_QD[0] * q + _QD[1]) * q + _QD[2]) * q + _QD[3]) * q + 1.0))
    # Halley refinement
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# ---------------------------------------------------------------------------
# flat key-value model serialization
# ---------------------------------------------------------------------------


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def _write_kv(fh, key: str, value) -> None:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        fh.write(f"{key} = {_fmt17(arr)}\n")
    else:
        fh.write(f"{key} = {','.join(_fmt17(v) for v in arr.ravel())}\n")


def save_model(model, path) -> None:
    """Serialize a trained model as flat key-value text (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        if isinstance(model, SparseGpModel):
            fh.write("kind = sparse\n")
            m, d = model.inducing.shape
            fh.write(f"m = {m}\nn_dims = {d}\n")
            _write_kv(fh, "signal_variance", model.hyper.signal_variance)
            _write_kv(fh, "length_scales", model.hyper.length_scales)
            _write_kv(fh, "noise_variance", model.hyper.noise_variance)
            _write_kv(fh, "inducing", model.inducing)
            _write_kv(fh, "chol_inducing", model.chol_inducing)
            _write_kv(fh, "chol_cap", model.chol_cap)
            _write_kv(fh, "mean_weights", model.mean_weights)
        elif isinstance(model, GpModel):
            fh.write("kind = exact\n")
            n, d = model.dataset.inputs.shape
            fh.write(f"n = {n}\nn_dims = {d}\n")
            _write_kv(fh, "signal_variance", model.hyper.signal_variance)
            _write_kv(fh, "length_scales", model.hyper.length_scales)
            _write_kv(fh, "noise_variance", model.hyper.noise_variance)
            _write_kv(fh, "inputs", model.dataset.inputs)
            _write_kv(fh, "targets", model.dataset.targets)
            _write_kv(fh, "chol_factor", model.chol_factor)
            _write_kv(fh, "alpha", model.alpha)
        else:
            raise TypeError(f"cannot serialize {type(model).__name__}")


def load_model(path):
    """Load a model written by :func:`save_model`."""
    kv = {}
    with open(path, "r") as fh:
        for i, ln in enumerate(fh, start=1):
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if "=" not in ln:
                raise ValueError(f"{path}:{i}: expected 'key = value'")
            key, _, val = ln.partition("=")
            kv[key.strip()] = val.strip()

    def vec(key):
        return np.array([float(v) for v in kv[key].split(",")])

    kind = kv.get("kind")
    d = int(float(kv["n_dims"]))
    hyper = KernelHyper(
        signal_variance=float(kv["signal_variance"]),
        length_scales=vec("length_scales"),
        noise_variance=float(kv["noise_variance"]),
    )
    if kind == "sparse":
        m = int(float(kv["m"]))
        return SparseGpModel(
            inducing=vec("inducing").reshape(m, d),
            hyper=hyper,
            chol_inducing=vec("chol_inducing").reshape(m, m),
            chol_cap=vec("chol_cap").reshape(m, m),
            mean_weights=vec("mean_weights"),
        )
    if kind == "exact":
        n = int(float(kv["n"]))
        data = Dataset(inputs=vec("inputs").reshape(n, d), targets=vec("targets"))
        return GpModel(
            dataset=data,
            hyper=hyper,
            chol_factor=vec("chol_factor").reshape(n, n),
            alpha=vec("alpha"),
        )
    raise ValueError(f"{path}: unknown model kind {kind!r}")
