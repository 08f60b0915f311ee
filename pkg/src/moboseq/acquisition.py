"""Acquisition functions over the surrogate posterior.

All objectives are maximized. ``log_ei`` serves single-objective runs,
``ehvi_2d`` is the exact two-objective expected hypervolume improvement and
``qehvi_mc`` / ``qnehvi_mc`` are Monte-Carlo batch estimators. The
``*Acquisition`` classes evaluate many candidate batches at once against
fixed base samples; they are what the genetic optimizer calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, ndtr

from .encoding import tanimoto_matrix
from .errors import WrongObjectiveCount
from .pareto import hv2d_batch, hypervolume, nondominated_mask
from .surrogate import SurrogateModel, gaussian_factor, sample_posterior

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


@dataclass
class AcquisitionContext:
    pareto_front: np.ndarray
    reference_point: np.ndarray
    mc_samples: int = 128
    seed: int | None = None

    def __post_init__(self):
        self.reference_point = np.asarray(self.reference_point, dtype=float).ravel()
        k = self.reference_point.shape[0]
        F = np.asarray(self.pareto_front, dtype=float).reshape(-1, k)
        F = F[np.all(F > self.reference_point, axis=1)]
        if len(F):
            F = np.unique(F[nondominated_mask(F)], axis=0)
        self.pareto_front = F

    @property
    def k(self) -> int:
        return self.reference_point.shape[0]


# ---------------------------------------------------------------------------
# Log expected improvement
# ---------------------------------------------------------------------------


def log_h(z: np.ndarray) -> np.ndarray:
    """log(phi(z) + z * Phi(z)), accurate far into the lower tail."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    upper = z > -1.0
    zu = z[upper]
    out[upper] = np.log(np.exp(-0.5 * zu * zu - HALF_LOG_2PI) + zu * ndtr(zu))
    a = -z[~upper]
    mid = a < 1e4
    tail = np.empty_like(a)
    am = a[mid]
    # h(z) = phi(z) * (1 - a * sqrt(pi/2) * erfcx(a / sqrt 2)) with a = -z
    tail[mid] = -0.5 * am * am - HALF_LOG_2PI + np.log1p(-am * _SQRT_HALF_PI * erfcx(am / math.sqrt(2.0)))
    af = a[~mid]
    tail[~mid] = -0.5 * af * af - HALF_LOG_2PI - 2.0 * np.log(af) + np.log1p(-3.0 / af**2)
    out[~upper] = tail
    return out


def log_ei(mean, std, best) -> np.ndarray | float:
    """Logarithm of the expected improvement over ``best``.

    With ``std == 0`` this is ``log(max(mean - best, 0))`` (``-inf`` when
    nothing improves).
    """
    mean, std, best = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mean, std, best)))
    out = np.empty(mean.shape)
    det = std <= 0
    with np.errstate(divide="ignore"):
        out[det] = np.log(np.maximum(mean[det] - best[det], 0.0))
    s = std[~det]
    out[~det] = np.log(s) + log_h((mean[~det] - best[~det]) / s)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Exact two-objective EHVI
# ---------------------------------------------------------------------------


def _expected_excess(mu: np.ndarray, sigma: np.ndarray, a: np.ndarray) -> np.ndarray:
    """E[max(Y - a, 0)] for Y ~ N(mu, sigma^2), broadcasting; ``a`` may be +inf."""
    mu, sigma, a = np.broadcast_arrays(mu, sigma, a)
    out = np.zeros(mu.shape)
    finite = np.isfinite(a)
    det = finite & (sigma <= 0)
    out[det] = np.maximum(mu[det] - a[det], 0.0)
    rnd = finite & (sigma > 0)
    z = (mu[rnd] - a[rnd]) / sigma[rnd]
    out[rnd] = sigma[rnd] * np.exp(log_h(z))
    return out


def ehvi_2d(means, stds, ctx: AcquisitionContext) -> np.ndarray | float:
    """Exact EHVI for independent Gaussian objectives, two objectives only.

    The region above the reference that the front does not dominate is cut
    into vertical strips between consecutive front points; in each strip the
    improvement factorizes into a product of one-dimensional expectations.
    ``means``/``stds`` have shape ``(2,)`` or ``(m, 2)``.
    """
    if ctx.k != 2:
        raise WrongObjectiveCount(f"ehvi_2d needs two objectives, context has {ctx.k}")
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    sd = np.atleast_2d(np.asarray(stds, dtype=float))
    if mu.shape[-1] != 2:
        raise WrongObjectiveCount(f"ehvi_2d needs two objectives, got {mu.shape[-1]}")
    r = ctx.reference_point
    F = ctx.pareto_front
    F = F[np.lexsort((-F[:, 1], F[:, 0]))] if len(F) else F
    lower = np.concatenate([[r[0]], F[:, 0]])
    upper = np.concatenate([F[:, 0], [np.inf]])
    heights = np.concatenate([F[:, 1], [r[1]]])
    m1, s1 = mu[:, :1], sd[:, :1]
    m2, s2 = mu[:, 1:], sd[:, 1:]
    width = _expected_excess(m1, s1, lower[None, :]) - _expected_excess(m1, s1, upper[None, :])
    height = _expected_excess(m2, s2, heights[None, :])
    val = np.sum(np.maximum(width, 0.0) * height, axis=1)
    return val if np.ndim(means) > 1 else float(val[0])


# ---------------------------------------------------------------------------
# Monte-Carlo hypervolume improvement
# ---------------------------------------------------------------------------


def hv_batch(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Hypervolume of each point set in a stack of shape ``(..., n, k)``."""
    ref = np.asarray(ref, dtype=float)
    k = ref.shape[0]
    if points.shape[-2] == 0:
        return np.zeros(points.shape[:-2])
    if k == 1:
        return np.maximum(points[..., 0].max(axis=-1) - ref[0], 0.0)
    if k == 2:
        return hv2d_batch(points, ref)
    lead = points.shape[:-2]
    flat = points.reshape((-1,) + points.shape[-2:])
    return np.array([hypervolume(p, ref) for p in flat]).reshape(lead)


def mc_improvements(samples: np.ndarray, front: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-sample HV(front + sampled batch) - HV(front), clamped at zero.

    ``samples`` has shape ``(..., q, k)``; the result has shape ``(...)``.
    """
    ref = np.asarray(ref, dtype=float)
    front = np.asarray(front, dtype=float).reshape(-1, ref.shape[0])
    base = hypervolume(front, ref) if len(front) else 0.0
    tiled = np.broadcast_to(front, samples.shape[:-2] + front.shape)
    both = np.concatenate([tiled, samples], axis=-2)
    return np.maximum(hv_batch(both, ref) - base, 0.0)


def qehvi_mc(
    candidate_batch: np.ndarray,
    model: SurrogateModel,
    ctx: AcquisitionContext,
    base_samples: np.ndarray | None = None,
    return_se: bool = False,
):
    """Monte-Carlo expected hypervolume improvement of a batch of embeddings."""
    rng = np.random.default_rng(ctx.seed)
    samples = sample_posterior(model, candidate_batch, ctx.mc_samples, rng, base_samples=base_samples)
    vals = mc_improvements(samples, ctx.pareto_front, ctx.reference_point)
    mean = float(vals.mean())
    if return_se:
        return mean, float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return mean


def qnehvi_mc(
    candidate_batch: np.ndarray,
    model: SurrogateModel,
    observed_X: np.ndarray,
    ctx: AcquisitionContext,
    base_samples: np.ndarray | None = None,
    return_se: bool = False,
):
    """Monte-Carlo noisy EHVI: the front is re-derived inside every sample
    from the jointly sampled latent values at the observed points."""
    rng = np.random.default_rng(ctx.seed)
    n_obs = 0 if observed_X is None else observed_X.shape[0]
    Xall = candidate_batch if n_obs == 0 else np.vstack([observed_X, candidate_batch])
    samples = sample_posterior(model, Xall, ctx.mc_samples, rng, base_samples=base_samples)
    obs, cand = samples[:, :n_obs], samples
    ref = ctx.reference_point
    vals = np.maximum(hv_batch(cand, ref) - hv_batch(obs, ref), 0.0)
    mean = float(vals.mean())
    if return_se:
        return mean, float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return mean


# ---------------------------------------------------------------------------
# Batched evaluators used inside the genetic optimizer
# ---------------------------------------------------------------------------


class LogEIAcquisition:
    """Single objective, one candidate per individual."""

    def __init__(self, model: SurrogateModel, best: float):
        if model.k != 1:
            raise WrongObjectiveCount(f"LogEI needs one objective, model has {model.k}")
        self.model = model
        self.best = best

    def evaluate(self, X: np.ndarray, batches: np.ndarray) -> np.ndarray:
        post = self.model.posterior(X)[0]
        vals = log_ei(post.mean, post.std, self.best)
        return np.asarray(vals)[batches[:, 0]]


class EHVIAcquisition:
    """Exact two-objective EHVI, one candidate per individual."""

    def __init__(self, model: SurrogateModel, ctx: AcquisitionContext):
        if model.k != 2:
            raise WrongObjectiveCount(f"exact EHVI needs two objectives, model has {model.k}")
        self.model = model
        self.ctx = ctx

    def evaluate(self, X: np.ndarray, batches: np.ndarray) -> np.ndarray:
        posts = self.model.posterior(X)
        means = np.stack([p.mean for p in posts], axis=1)
        stds = np.stack([p.std for p in posts], axis=1)
        return ehvi_2d(means, stds, self.ctx)[batches[:, 0]]


class QEHVIAcquisition:
    """MC batch EHVI with base samples fixed at construction."""

    def __init__(self, model: SurrogateModel, ctx: AcquisitionContext, q: int, rng: np.random.Generator):
        self.model = model
        self.ctx = ctx
        self.base = rng.standard_normal((ctx.mc_samples, q, model.k))

    def evaluate(self, X: np.ndarray, batches: np.ndarray) -> np.ndarray:
        """``X`` holds unique candidate embeddings, ``batches`` (P, q) row indices into it."""
        posts = self.model.posterior(X, full_cov=True)
        samples = np.empty((batches.shape[0], self.ctx.mc_samples, batches.shape[1], self.model.k))
        for j, post in enumerate(posts):
            mean = post.mean[batches]  # (P, q)
            cov = post.covariance[batches[:, :, None], batches[:, None, :]]  # (P, q, q)
            A = gaussian_factor(cov)
            samples[..., j] = mean[:, None, :] + np.einsum("pab,sb->psa", A, self.base[:, :, j])
        return mc_improvements(samples, self.ctx.pareto_front, self.ctx.reference_point).mean(axis=1)


class QNEHVIAcquisition:
    """MC noisy batch EHVI with fixed samples of the latent values at the
    observed points; candidates are drawn conditionally on those samples."""

    def __init__(self, model: SurrogateModel, ctx: AcquisitionContext, q: int, rng: np.random.Generator,
                 eig_tol: float = 1e-10):
        self.model = model
        self.ctx = ctx
        S, k = ctx.mc_samples, model.k
        lam, Q = model.lam, model.Q
        keep = lam > eig_tol * max(lam.max(), 1.0)
        self.lam_inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
        z_obs = rng.standard_normal((S, model.n, k))
        self.base = rng.standard_normal((S, q, k))
        # latent draws at the observed points, standardized units, in the eigenbasis
        self.G = []  # per objective: Q^T f_obs, shape (n, S)
        f_obs = np.empty((S, model.n, k))
        for j, fit in enumerate(model.fits):
            if fit.degenerate:
                g = np.zeros((model.n, S))
                f_obs[:, :, j] = fit.y_mean
            else:
                s = fit.hyper.signal_variance
                lam_c = np.maximum(lam, 0.0)
                mean_e = s * lam_c * fit.coef  # Q^T mu_obs
                var_e = np.maximum(s * lam_c - (s * lam_c) ** 2 / fit.kappa, 0.0)
                g = mean_e[:, None] + np.sqrt(var_e)[:, None] * z_obs[:, :, j].T
                f_obs[:, :, j] = (Q @ g).T * fit.y_std + fit.y_mean
            self.G.append(g)
        ref = ctx.reference_point
        self.base_hv = hv_batch(f_obs, ref)
        self.fronts = _padded_fronts(f_obs, ref)

    def evaluate(self, X: np.ndarray, batches: np.ndarray) -> np.ndarray:
        model = self.model
        Tco = tanimoto_matrix(X, model.X)
        A = Tco @ model.Q  # (U, n)
        B = A * self.lam_inv[None, :]
        Tcc = tanimoto_matrix(X, X)
        P, q = batches.shape
        S, k = self.ctx.mc_samples, model.k
        samples = np.empty((P, S, q, k))
        for j, fit in enumerate(model.fits):
            if fit.degenerate:
                mean = np.full((X.shape[0], S), fit.y_mean)
                cov = Tcc
                scale = 1.0
            else:
                s = fit.hyper.signal_variance
                mean = (B @ self.G[j]) * fit.y_std + fit.y_mean  # (U, S)
                cov = s * (Tcc - B @ A.T)
                scale = fit.y_std
            cov = 0.5 * (cov + cov.T) * scale**2
            C = cov[batches[:, :, None], batches[:, None, :]]
            L = gaussian_factor(C)
            m = mean[batches]  # (P, q, S)
            samples[..., j] = np.transpose(m, (0, 2, 1)) + np.einsum("pab,sb->psa", L, self.base[:, :, j])
        ref = self.ctx.reference_point
        fronts = np.broadcast_to(self.fronts, (P,) + self.fronts.shape)
        both = np.concatenate([fronts, samples], axis=2)
        vals = np.maximum(hv_batch(both, ref) - self.base_hv[None, :], 0.0)
        return vals.mean(axis=1)


def _padded_fronts(F: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-sample non-dominated subsets of ``F`` (S, n, k), padded with the reference point."""
    S, n, k = F.shape
    if n == 0:
        return np.broadcast_to(ref, (S, 1, k)).copy()
    masks = []
    if k == 2:
        order = np.argsort(-F[..., 0], axis=1, kind="stable")
        y = np.take_along_axis(F[..., 1], order, axis=1)
        prev = np.concatenate([np.full((S, 1), -np.inf), np.maximum.accumulate(y, axis=1)[:, :-1]], axis=1)
        keep_sorted = y > prev
        mask = np.zeros((S, n), dtype=bool)
        np.put_along_axis(mask, order, keep_sorted, axis=1)
        masks = list(mask)
    else:
        masks = [nondominated_mask(F[s]) for s in range(S)]
    width = max(1, max(int(m.sum()) for m in masks))
    out = np.broadcast_to(ref, (S, width, k)).copy()
    for s, m in enumerate(masks):
        pts = F[s][m]
        out[s, : len(pts)] = pts
    return out
