"""Geometric primitives shared by the bagging pipeline.

Point sets are plain ``(n, 3)`` float64 arrays in the world frame unless a
frame argument says otherwise.  Frames, ellipses and ordered rims are small
dataclasses with their invariants checked at construction time.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import (
    DegenerateRim,
    DegenerateSpread,
    DegenerateVertices,
    EmptySet,
    KTooLarge,
    NonPositiveAxis,
    TooFewPoints,
)

COPLANARITY_TOL = 1e-4  # max out-of-plane residual for vertex sets, meters


def as_points(points):
    """Coerce input to a finite (n, 3) float64 array."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points contain NaN or Inf")
    return pts


@dataclass(frozen=True)
class BottomFrame:
    """Rigid transform from the object-bottom frame to the world frame.

    ``rotation`` columns are the frame axes (a_x, a_y, a_z) expressed in the
    world frame; ``origin`` is the vertex centroid.
    """

    rotation: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        o = np.asarray(self.origin, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation must be right-handed (det +1)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "origin", o)

    @property
    def a_x(self):
        return self.rotation[:, 0]

    @property
    def a_y(self):
        return self.rotation[:, 1]

    @property
    def a_z(self):
        return self.rotation[:, 2]


@dataclass(frozen=True)
class Ellipse2D:
    """Ellipse in the bottom-frame xy-plane: center, semi-axes, orientation."""

    tau_x: float
    tau_y: float
    rho_a: float
    rho_b: float
    alpha: float

    def __post_init__(self):
        if not (self.rho_a >= self.rho_b > 0):
            raise NonPositiveAxis(
                f"require rho_a >= rho_b > 0, got ({self.rho_a}, {self.rho_b})"
            )
        object.__setattr__(self, "alpha", float(self.alpha) % np.pi)

    def sample(self, n):
        """n points at uniformly spaced parameter angles, shape (n, 2)."""
        theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        x = self.tau_x + self.rho_a * np.cos(theta) * ca - self.rho_b * np.sin(theta) * sa
        y = self.tau_y + self.rho_a * np.cos(theta) * sa + self.rho_b * np.sin(theta) * ca
        return np.column_stack([x, y])

    def perimeter(self):
        return ellipse_perimeter(self.rho_a, self.rho_b)


@dataclass(frozen=True)
class Ellipse3D:
    """Parametric 3D ellipse: center c, unit axes u and v, axis lengths."""

    c: np.ndarray
    u: np.ndarray
    v: np.ndarray
    rho_u: float
    rho_v: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(3)
        u = np.asarray(self.u, dtype=float).reshape(3)
        v = np.asarray(self.v, dtype=float).reshape(3)
        if abs(np.linalg.norm(u) - 1.0) > 1e-9 or abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("axis vectors must be unit length")
        if abs(u @ v) > 1e-9:
            raise ValueError("axis vectors must be orthogonal")
        if not (self.rho_u >= self.rho_v > 0):
            raise NonPositiveAxis(
                f"require rho_u >= rho_v > 0, got ({self.rho_u}, {self.rho_v})"
            )
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def normal(self):
        return np.cross(self.u, self.v)

    def perimeter(self):
        return ellipse_perimeter(self.rho_u, self.rho_v)


@dataclass(frozen=True)
class OrderedSOI:
    """Rim state: n_x points in cyclic order, with a step index."""

    points: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        object.__setattr__(self, "points", as_points(self.points))

    def __len__(self):
        return len(self.points)

    @property
    def n_x(self):
        return len(self.points)

    def as_vector(self):
        """Flatten to the 3*n_x state vector."""
        return self.points.reshape(-1)

    def centroid(self):
        return self.points.mean(axis=0)

    @staticmethod
    def from_vector(x, timestamp=0):
        return OrderedSOI(np.asarray(x, dtype=float).reshape(-1, 3), timestamp)


def validate_vertex_set(vertices, coplanarity_tol=COPLANARITY_TOL):
    """Check an object-bottom vertex set: >= 3 coplanar points.

    Returns the (n_v, 3) array.  Raises DegenerateVertices when the set
    cannot define a plane or leaves the plane beyond tolerance.
    """
    V = as_points(vertices)
    if len(V) < 3:
        raise DegenerateVertices(f"need >= 3 vertices, got {len(V)}")
    centered = V - V.mean(axis=0)
    # smallest singular direction = plane normal; residual = out-of-plane extent
    _, s, _ = np.linalg.svd(centered, full_matrices=False)
    if s[1] < 1e-12:
        raise DegenerateVertices("vertices are collinear")
    residual = s[2] / np.sqrt(len(V)) if len(s) > 2 else 0.0
    if residual > coplanarity_tol:
        raise DegenerateVertices(
            f"vertices deviate from a plane by {residual:.2e} m"
        )
    return V


def build_bottom_frame(vertices):
    """Construct the object-bottom frame from coplanar vertices.

    The z-axis is the plane normal from the maximum-area vertex triple,
    the origin is the vertex centroid.  Transforming the vertices into the
    frame yields z == 0 and centroid == 0.
    """
    V = validate_vertex_set(vertices)
    vbar = V.mean(axis=0)
    d = V - vbar

    n = len(V)
    best, best_area = None, 0.0
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            for k in range(j + 1, n):
                area = 0.5 * np.linalg.norm(
                    np.cross(V[j] - V[i], V[k] - V[i])
                )
                if area > best_area:
                    best, best_area = (i, j, k), area
    if best is None or best_area < 1e-12:
        raise DegenerateVertices("all vertex triples are collinear")

    # within the triple, use the vertex farthest from the centroid for a_y
    triple = sorted(best, key=lambda idx: np.linalg.norm(d[idx]))
    i, j, k = triple
    a_z = np.cross(d[i], d[j])
    nz = np.linalg.norm(a_z)
    if nz < 1e-12:
        # centered vertices can be antiparallel; fall back to triangle edges
        a_z = np.cross(V[j] - V[i], V[k] - V[i])
        nz = np.linalg.norm(a_z)
    a_z = a_z / nz
    a_y = d[k] / np.linalg.norm(d[k])
    a_y = a_y - (a_y @ a_z) * a_z  # guard tiny out-of-plane residual
    a_y = a_y / np.linalg.norm(a_y)
    a_x = np.cross(a_y, a_z)
    a_x = a_x / np.linalg.norm(a_x)
    return BottomFrame(np.column_stack([a_x, a_y, a_z]), vbar)


def to_frame(points, frame):
    """Express world points in the given frame."""
    pts = as_points(points)
    return (pts - frame.origin) @ frame.rotation


def from_frame(points, frame):
    """Express frame-local points in the world frame."""
    pts = as_points(points)
    return pts @ frame.rotation.T + frame.origin


def ellipse_perimeter(rho_a, rho_b):
    """Ellipse perimeter via the Ramanujan-II approximation.

    Relative error stays below 1e-4 against the exact elliptic integral for
    aspect ratios up to 10.
    """
    if rho_a <= 0 or rho_b <= 0:
        raise NonPositiveAxis(f"axes must be positive, got ({rho_a}, {rho_b})")
    h = ((rho_a - rho_b) / (rho_a + rho_b)) ** 2
    return np.pi * (rho_a + rho_b) * (1.0 + 3.0 * h / (10.0 + np.sqrt(4.0 - 3.0 * h)))


def ellipse_perimeter_quadrature(rho_a, rho_b):
    """Reference perimeter by adaptive quadrature of the arc-length integrand."""
    if rho_a <= 0 or rho_b <= 0:
        raise NonPositiveAxis(f"axes must be positive, got ({rho_a}, {rho_b})")

    def integrand(t):
        return np.hypot(rho_a * np.sin(t), rho_b * np.cos(t))

    val, _ = quad(integrand, 0.0, 2.0 * np.pi, limit=200)
    return val


def polyline_perimeter(points):
    """Perimeter of a closed ordered loop, including the closing segment."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise TooFewPoints(f"closed loop needs >= 3 points, got {len(pts)}")
    diffs = np.roll(pts, -1, axis=0) - pts
    return float(np.linalg.norm(diffs, axis=1).sum())


def pca_principal_axis(points_2d):
    """Dominant covariance eigenvector of a 2D point set, sign-normalized.

    The sign is fixed so the first nonzero component is positive; callers
    that care only about parallelism should compare absolute dot products.
    """
    pts = np.asarray(points_2d, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("expected (n, 2) points with n >= 2")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    if np.trace(cov) < 1e-18:
        raise DegenerateSpread("point set has no spread")
    w, vecs = np.linalg.eigh(cov)
    axis = vecs[:, np.argmax(w)]
    for comp in axis:
        if abs(comp) > 1e-12:
            if comp < 0:
                axis = -axis
            break
    return axis


def pca_axis_ratio(points_2d):
    """sqrt(minor/major eigenvalue) of the 2D covariance, in [0, 1]."""
    pts = np.asarray(points_2d, dtype=float)
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    w = np.linalg.eigvalsh(cov)
    if w[1] < 1e-18:
        return 0.0
    return float(np.sqrt(max(w[0], 0.0) / w[1]))


def farthest_point_sampling(points, k, start_index=0):
    """Greedy max-min subset of k points; deterministic given start_index."""
    pts = as_points(points)
    n = len(pts)
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} points")
    if k < 1:
        raise KTooLarge("k must be >= 1")
    selected = [start_index % n]
    dist = np.linalg.norm(pts - pts[selected[0]], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        selected.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return pts[selected]


def chamfer_distance(A, B):
    """Symmetric Chamfer distance: mean squared nearest-neighbor distance
    from A to B plus the same from B to A."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if len(A) == 0 or len(B) == 0:
        raise EmptySet("both point sets must be nonempty")
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def sample_ellipse3d(ellipse, n):
    """n ordered points on a 3D ellipse at uniformly spaced angles."""
    if n < 3:
        raise TooFewPoints("need n >= 3 samples")
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return (
        ellipse.c
        + ellipse.rho_u * np.cos(theta)[:, None] * ellipse.u
        + ellipse.rho_v * np.sin(theta)[:, None] * ellipse.v
    )


def fit_rim_plane(points):
    """Best-fit plane of a rim: (centroid, unit normal).

    Raises DegenerateRim when the points are collinear.
    """
    pts = as_points(points)
    centroid = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    if s[1] < 1e-12 * max(s[0], 1.0):
        raise DegenerateRim("rim points are collinear")
    normal = vt[2]
    return centroid, normal


def align_cyclic(points, reference, allow_reversal=True):
    """Circularly shift (and optionally reverse) points to best match reference.

    Minimizes the sum of squared per-index distances; both arrays must have
    the same length.  Returns the realigned copy of ``points``.
    """
    P = as_points(points)
    R = as_points(reference)
    if len(P) != len(R):
        raise ValueError("point sets must have equal length")
    n = len(P)
    idx = (np.arange(n)[None, :] + np.arange(n)[:, None]) % n  # all rolls
    candidates = [P]
    if allow_reversal:
        candidates.append(P[::-1])
    best, best_cost = None, np.inf
    for cand in candidates:
        rolled = cand[idx]  # (n_shifts, n, 3)
        costs = ((rolled - R[None, :, :]) ** 2).sum(axis=(1, 2))
        k = int(np.argmin(costs))
        if costs[k] < best_cost:
            best, best_cost = rolled[k], costs[k]
    return best


def soi_distance(a, b):
    """Max per-point distance between two rims after cyclic alignment."""
    A = a.points if isinstance(a, OrderedSOI) else as_points(a)
    B = b.points if isinstance(b, OrderedSOI) else as_points(b)
    aligned = align_cyclic(A, B)
    return float(np.linalg.norm(aligned - B, axis=1).max())
