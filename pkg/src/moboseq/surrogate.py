"""Independent Tanimoto-kernel Gaussian processes, one per objective.

Targets are standardized per objective; the kernel is
``K = s * T + (noise + jitter) * I`` with ``T`` the Tanimoto Gram matrix of
the training embeddings. ``T`` is eigendecomposed once per fit and the
eigenbasis is shared by every objective, so a marginal-likelihood evaluation
costs O(n) and posterior queries need a single matrix product.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .encoding import tanimoto_matrix
from .errors import DecompositionFailure, DegenerateTargets, SingularKernel

LOG_2PI = math.log(2.0 * math.pi)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SAMPLE_STABILIZER = 1e-10


@dataclass
class GpHyperparams:
    signal_variance: float = 1.0
    noise_variance: float = 0.1
    jitter: float = 1e-6

    def __post_init__(self):
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")


@dataclass
class FitConfig:
    signal_bounds: tuple[float, float] = (1e-2, 1e2)
    noise_bounds: tuple[float, float] = (1e-6, 1.0)
    grid_size: int = 5
    max_evaluations: int = 50
    jitter: float = 1e-6
    max_jitter: float = 1e-2
    # skip the search and use these hyperparameters as given
    fixed: GpHyperparams | None = None


@dataclass
class Posterior:
    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass
class ObjectiveFit:
    hyper: GpHyperparams
    y: np.ndarray
    y_mean: float
    y_std: float
    kappa: np.ndarray  # eigenvalues of K in the eigenbasis of T
    coef: np.ndarray  # Q^T K^{-1} y
    lml: float
    degenerate: bool = False
    _factor: np.ndarray | None = field(default=None, repr=False)


def gaussian_log_likelihood(y: np.ndarray, K: np.ndarray) -> float:
    """log N(y | 0, K) through a Cholesky factorization."""
    y = np.asarray(y, dtype=float)
    try:
        L = cholesky(np.asarray(K, dtype=float), lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularKernel(str(exc)) from exc
    a = solve_triangular(L, y, lower=True)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * LOG_2PI)


class SurrogateModel:
    """Fitted per-objective GPs sharing one set of training embeddings."""

    def __init__(self, X: np.ndarray, T: np.ndarray, lam: np.ndarray, Q: np.ndarray, fits: list[ObjectiveFit]):
        self.X = X
        self.T = T
        self.lam = lam
        self.Q = Q
        self.fits = fits

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return len(self.fits)

    def kernel_matrix(self, j: int) -> np.ndarray:
        h = self.fits[j].hyper
        return h.signal_variance * self.T + (h.noise_variance + h.jitter) * np.eye(self.n)

    def factor(self, j: int) -> np.ndarray:
        """Lower Cholesky factor of objective ``j``'s kernel matrix."""
        fit = self.fits[j]
        if fit._factor is None:
            fit._factor = _cholesky_escalating(self.T, fit.hyper)
        return fit._factor

    def posterior(self, Xq: np.ndarray, full_cov: bool = False) -> list[Posterior]:
        """Predictive distribution of the latent function at ``Xq``, in target units."""
        Tq = tanimoto_matrix(self.X, Xq)
        W = self.Q.T @ Tq
        prior_diag = _self_similarity(Xq)
        Tqq = tanimoto_matrix(Xq, Xq) if full_cov else None
        out = []
        for fit in self.fits:
            if fit.degenerate:
                m = Xq.shape[0]
                cov = Tqq.copy() if full_cov else None
                out.append(Posterior(np.full(m, fit.y_mean), prior_diag.copy(), cov))
                continue
            s = fit.hyper.signal_variance
            mean = s * (W.T @ fit.coef)
            Wk = W / np.sqrt(fit.kappa)[:, None]
            var = s * prior_diag - s * s * np.einsum("ij,ij->j", Wk, Wk)
            var = np.maximum(var, 0.0)
            cov = None
            if full_cov:
                cov = s * Tqq - s * s * (Wk.T @ Wk)
                cov = 0.5 * (cov + cov.T)
                np.fill_diagonal(cov, var)
                cov *= fit.y_std**2
            out.append(Posterior(mean * fit.y_std + fit.y_mean, var * fit.y_std**2, cov))
        return out

    def posterior_cholesky(self, Xq: np.ndarray) -> list[Posterior]:
        """Marginal posterior through the Cholesky factor (reference route)."""
        Tq = tanimoto_matrix(self.X, Xq)
        prior_diag = _self_similarity(Xq)
        out = []
        for j, fit in enumerate(self.fits):
            if fit.degenerate:
                out.append(Posterior(np.full(Xq.shape[0], fit.y_mean), prior_diag.copy()))
                continue
            s = fit.hyper.signal_variance
            L = self.factor(j)
            alpha = cho_solve((L, True), fit.y)
            v = solve_triangular(L, s * Tq, lower=True)
            mean = s * Tq.T @ alpha
            var = np.maximum(s * prior_diag - np.einsum("ij,ij->j", v, v), 0.0)
            out.append(Posterior(mean * fit.y_std + fit.y_mean, var * fit.y_std**2))
        return out


def _self_similarity(Xq: np.ndarray) -> np.ndarray:
    # Tanimoto self-similarity is 1 for every non-zero vector
    nz = np.einsum("ij,ij->i", Xq, Xq) > 0
    return nz.astype(float)


def _cholesky_escalating(T: np.ndarray, hyper: GpHyperparams, max_jitter: float = 1e-2) -> np.ndarray:
    n = T.shape[0]
    jitter = hyper.jitter
    while True:
        K = hyper.signal_variance * T + (hyper.noise_variance + jitter) * np.eye(n)
        try:
            L = cholesky(K, lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > max_jitter * (1 + 1e-9):
                raise SingularKernel("kernel matrix not positive definite even with maximal jitter") from None
            continue
        hyper.jitter = jitter
        return L


def _eig_lml(q2: np.ndarray, lam: np.ndarray, s: float, noise: float, jitter: float) -> float:
    kappa = s * lam + noise + jitter
    if kappa.min() <= 1e-10 * max(1.0, kappa.max()):
        return -math.inf
    return float(-0.5 * np.sum(q2 / kappa) - 0.5 * np.sum(np.log(kappa)) - 0.5 * len(q2) * LOG_2PI)


def _search_hyperparameters(q2: np.ndarray, lam: np.ndarray, cfg: FitConfig, jitter: float) -> tuple[float, float, float]:
    """Log-space grid followed by coordinate-wise golden-section refinement."""
    lo = np.log([cfg.signal_bounds[0], cfg.noise_bounds[0]])
    hi = np.log([cfg.signal_bounds[1], cfg.noise_bounds[1]])
    evals = 0
    best = (-math.inf, lo.copy())

    def f(z: np.ndarray) -> float:
        nonlocal evals, best
        evals += 1
        val = _eig_lml(q2, lam, math.exp(z[0]), math.exp(z[1]), jitter)
        if val > best[0]:
            best = (val, z.copy())
        return val

    axes = [np.linspace(lo[d], hi[d], cfg.grid_size) for d in range(2)]
    for a in axes[0]:
        for b in axes[1]:
            f(np.array([a, b]))
    if not math.isfinite(best[0]):
        return best[0], math.nan, math.nan
    step = (hi - lo) / max(cfg.grid_size - 1, 1)
    coord = 0
    while evals + 2 <= cfg.max_evaluations:
        z0 = best[1].copy()
        a, b = max(lo[coord], z0[coord] - step[coord]), min(hi[coord], z0[coord] + step[coord])

        def along(t: float) -> float:
            z = z0.copy()
            z[coord] = t
            return f(z)

        x1, x2 = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
        f1, f2 = along(x1), along(x2)
        for _ in range(4):
            if evals >= cfg.max_evaluations:
                break
            if f1 >= f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - GOLDEN * (b - a)
                f1 = along(x1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + GOLDEN * (b - a)
                f2 = along(x2)
        step = step * 0.5
        coord = 1 - coord
    return best[0], math.exp(best[1][0]), math.exp(best[1][1])


def fit(X: np.ndarray, Y: np.ndarray, config: FitConfig | None = None) -> SurrogateModel:
    """Fit one GP per column of ``Y`` on embeddings ``X``."""
    cfg = config or FitConfig()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if n < 2:
        raise ValueError("fitting needs at least two observations")
    if Y.shape[0] != n:
        raise ValueError(f"{n} embeddings but {Y.shape[0]} target rows")
    T = tanimoto_matrix(X, X)
    T = 0.5 * (T + T.T)
    try:
        lam, Q = np.linalg.eigh(T)
    except np.linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc

    fits = []
    for j in range(Y.shape[1]):
        y_raw = Y[:, j]
        mu, sd = float(y_raw.mean()), float(y_raw.std())
        if sd <= 1e-12 * max(1.0, abs(mu)):
            warnings.warn(f"objective {j} has constant targets; using a constant predictor", DegenerateTargets)
            fits.append(
                ObjectiveFit(GpHyperparams(1.0, 0.0, cfg.jitter), np.zeros(n), mu, 1.0,
                             np.ones(n), np.zeros(n), math.nan, degenerate=True)
            )
            continue
        y = (y_raw - mu) / sd
        q = Q.T @ y
        q2 = q * q
        jitter = cfg.fixed.jitter if cfg.fixed is not None else cfg.jitter
        while True:
            if cfg.fixed is not None:
                s, noise = cfg.fixed.signal_variance, cfg.fixed.noise_variance
                lml = _eig_lml(q2, lam, s, noise, jitter)
            else:
                lml, s, noise = _search_hyperparameters(q2, lam, cfg, jitter)
            if math.isfinite(lml):
                break
            jitter *= 10.0
            if jitter > cfg.max_jitter * (1 + 1e-9):
                raise SingularKernel(f"objective {j}: no positive-definite kernel up to jitter {cfg.max_jitter}")
        kappa = s * lam + noise + jitter
        fits.append(ObjectiveFit(GpHyperparams(s, noise, jitter), y, mu, sd, kappa, q / kappa, lml))
    return SurrogateModel(X, T, lam, Q, fits)


def log_marginal_likelihood(model: SurrogateModel, signal_variance: float, noise_variance: float, objective: int = 0) -> float:
    """Exact LML of the standardized targets of ``objective`` under the given hyperparameters."""
    fit_ = model.fits[objective]
    K = signal_variance * model.T + (noise_variance + fit_.hyper.jitter) * np.eye(model.n)
    return gaussian_log_likelihood(fit_.y, K)


def posterior(model: SurrogateModel, Xq: np.ndarray, full_cov: bool = False) -> list[Posterior]:
    return model.posterior(Xq, full_cov=full_cov)


def gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """A matrix ``A`` with ``A A^T`` equal to ``cov`` plus a tiny diagonal stabilizer.

    Works on stacks of matrices. Falls back to a clamped eigendecomposition
    when the Cholesky factorization fails.
    """
    m = cov.shape[-1]
    C = cov + SAMPLE_STABILIZER * np.eye(m)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (C + np.swapaxes(C, -1, -2)))
        return V * np.sqrt(np.maximum(w, 0.0))[..., None, :]


def sample_posterior(
    model: SurrogateModel,
    Xq: np.ndarray,
    n_samples: int,
    rng: np.random.Generator | None = None,
    base_samples: np.ndarray | None = None,
) -> np.ndarray:
    """Joint posterior draws with shape ``(n_samples, m, k)``.

    ``base_samples`` (standard normals of the same shape) fixes the draws, so
    repeated calls with the same base samples evaluate a deterministic surface.
    """
    m = Xq.shape[0]
    if base_samples is None:
        base_samples = rng.standard_normal((n_samples, m, model.k))
    out = np.empty((n_samples, m, model.k))
    for j, post in enumerate(model.posterior(Xq, full_cov=True)):
        A = gaussian_factor(post.covariance)
        out[:, :, j] = post.mean[None, :] + base_samples[:, :, j] @ A.T
    return out
