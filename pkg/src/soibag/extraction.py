"""Rim extraction from dense noisy point clouds.

A Gaussian mixture with one uniform outlier component is fitted by EM; the
Gaussian means become the rim points, which are then put into a stable
cyclic order.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .errors import DegenerateRim, InsufficientPoints, ParseError
from .geometry import (
    OrderedSOI,
    align_cyclic,
    as_points,
    farthest_point_sampling,
    fit_rim_plane,
)

OUTLIER_WEIGHT_FLOOR = 0.01


@dataclass(frozen=True)
class GmmConfig:
    """EM settings for the rim extractor."""

    n_x: int = 32
    outlier_weight: float = 0.05
    max_iters: int = 100
    loglik_rel_tol: float = 1e-6
    covariance_floor: float = 1e-6  # added eigenvalue floor, meters^2

    def __post_init__(self):
        if self.n_x < 1:
            raise ValueError("n_x must be >= 1")
        if not (0.0 <= self.outlier_weight < 1.0):
            raise ValueError("outlier_weight must be in [0, 1)")
        if self.loglik_rel_tol <= 0:
            raise ValueError("loglik_rel_tol must be positive")
        if self.covariance_floor <= 0:
            raise ValueError("covariance_floor must be positive")


@dataclass(frozen=True)
class GmmModel:
    """Fitted mixture: n_x Gaussians plus one uniform outlier component.

    ``weights`` holds the Gaussian weights; ``outlier_weight`` the uniform
    component's share.  All weights sum to one.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    outlier_weight: float
    uniform_density: float
    log_likelihoods: np.ndarray
    converged: bool

    @property
    def n_components(self):
        return len(self.means)


def _floor_covariance(cov, floor):
    w, V = np.linalg.eigh(cov)
    w = np.maximum(w, floor)
    return (V * w) @ V.T


def _log_gaussians(cloud, means, covariances):
    """Per-point, per-component Gaussian log densities, shape (n_p, n_x)."""
    n_p = len(cloud)
    out = np.empty((n_p, len(means)))
    for j, (mu, cov) in enumerate(zip(means, covariances)):
        L = np.linalg.cholesky(cov)
        diff = np.linalg.solve(L, (cloud - mu).T)
        maha = (diff ** 2).sum(axis=0)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        out[:, j] = -0.5 * (maha + logdet + 3.0 * np.log(2.0 * np.pi))
    return out


def _bounding_box_density(cloud, inflate=0.05):
    lo = cloud.min(axis=0)
    hi = cloud.max(axis=0)
    span = np.maximum(hi - lo, 1e-6) * (1.0 + inflate)
    return 1.0 / float(np.prod(span))


def _density_filter(P, k=10, ratio=3.0):
    """Keep points whose k-th nearest neighbor is within ratio times the
    median such distance; isolated outliers fail this test."""
    k = min(k, len(P) - 1)
    if k < 1:
        return P
    d_k = cKDTree(P).query(P, k=k + 1)[0][:, -1]
    return P[d_k <= ratio * np.median(d_k)]


def fit_gmm(cloud, cfg, init=None):
    """Fit the outlier-robust GMM to a cloud by EM.

    Means start from ``init`` (a previous rim) when given, else from
    farthest point sampling over the cloud.  Returns the best model found;
    non-convergence within ``max_iters`` is reported via the flag, not
    raised.
    """
    P = as_points(cloud)
    if len(P) < cfg.n_x:
        raise InsufficientPoints(f"{len(P)} points < n_x={cfg.n_x}")

    # drop isolated sparse points up front; the uniform component absorbs
    # whatever outliers survive the density test
    dense = _density_filter(P)
    if len(dense) >= cfg.n_x:
        P = dense

    if init is not None:
        means = as_points(init.points if isinstance(init, OrderedSOI) else init).copy()
        if len(means) != cfg.n_x:
            raise ValueError("init must provide n_x means")
    else:
        means = farthest_point_sampling(P, cfg.n_x).copy()

    # isotropic start sized to the typical inter-mean gap
    span = P.max(axis=0) - P.min(axis=0)
    sigma2 = max(float(span @ span) / (cfg.n_x ** 2), cfg.covariance_floor)
    covariances = np.tile(np.eye(3) * sigma2, (cfg.n_x, 1, 1))

    pi_out = cfg.outlier_weight
    weights = np.full(cfg.n_x, (1.0 - pi_out) / cfg.n_x)
    uniform_density = _bounding_box_density(P)
    log_uniform = np.log(uniform_density) if pi_out > 0 else -np.inf

    logliks = []
    converged = False
    for _ in range(cfg.max_iters):
        # E-step
        log_resp = _log_gaussians(P, means, covariances) + np.log(weights)
        if pi_out > 0:
            log_out = np.full((len(P), 1), np.log(pi_out) + log_uniform)
            log_all = np.hstack([log_resp, log_out])
        else:
            log_all = log_resp
        log_norm = logsumexp(log_all, axis=1)
        loglik = float(log_norm.sum())
        logliks.append(loglik)

        resp = np.exp(log_all - log_norm[:, None])

        # M-step
        r = resp[:, : cfg.n_x]
        n_j = r.sum(axis=0)
        n_j_safe = np.maximum(n_j, 1e-12)
        means = (r.T @ P) / n_j_safe[:, None]
        for j in range(cfg.n_x):
            diff = P - means[j]
            cov = (r[:, j, None] * diff).T @ diff / n_j_safe[j]
            covariances[j] = _floor_covariance(cov, cfg.covariance_floor)

        if pi_out > 0:
            pi_out = float(resp[:, -1].mean())
            pi_out = min(max(pi_out, OUTLIER_WEIGHT_FLOOR), 0.9)
        weights = n_j / n_j.sum() * (1.0 - pi_out)

        if len(logliks) >= 2:
            prev, cur = logliks[-2], logliks[-1]
            if abs(cur - prev) < cfg.loglik_rel_tol * max(abs(prev), 1.0):
                converged = True
                break

    return GmmModel(
        weights=weights,
        means=means,
        covariances=covariances,
        outlier_weight=pi_out,
        uniform_density=uniform_density,
        log_likelihoods=np.asarray(logliks),
        converged=converged,
    )


def order_rim(means, timestamp=0):
    """Put rim points into a canonical cyclic order.

    The points are sorted by polar angle about their centroid in the
    best-fit plane, counter-clockwise about the normal with positive
    world-z component, starting from the point with the largest world x.
    """
    pts = as_points(means)
    centroid, normal = fit_rim_plane(pts)
    if normal[2] < 0:
        normal = -normal

    # in-plane basis
    ref = np.array([1.0, 0.0, 0.0])
    if abs(normal @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = ref - (ref @ normal) * normal
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)

    d = pts - centroid
    angles = np.arctan2(d @ e2, d @ e1)
    order = np.argsort(angles, kind="stable")
    ordered = pts[order]
    start = int(np.argmax(ordered[:, 0]))
    return OrderedSOI(np.roll(ordered, -start, axis=0), timestamp)


def extract_soi(cloud, cfg, prev=None):
    """Extract an ordered rim from a cloud: fit_gmm -> means -> order_rim.

    With ``prev`` given, EM warm-starts from the previous rim and the
    output indexing is aligned to it so consecutive extractions keep a
    stable point correspondence.
    """
    model = fit_gmm(cloud, cfg, init=prev)
    timestamp = prev.timestamp + 1 if prev is not None else 0
    soi = order_rim(model.means, timestamp)
    if prev is not None:
        aligned = align_cyclic(soi.points, prev.points)
        soi = OrderedSOI(aligned, timestamp)
    return soi


def load_cloud_xyz(path):
    """Read a whitespace- or comma-separated xyz text file into (n, 3)."""
    rows = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.replace(",", " ").split()
                if len(parts) != 3:
                    raise ParseError(f"{path}:{lineno}: expected 3 columns")
                try:
                    rows.append([float(p) for p in parts])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no points")
    return np.asarray(rows, dtype=float)
