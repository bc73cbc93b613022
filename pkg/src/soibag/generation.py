"""Bagging-ellipse optimization at the object bottom and goal-rim generation.

The bagging rim is the ellipse in the object-bottom plane whose perimeter
matches the bag rim perimeter R, subject to containment (C1), concentricity
(C2) and parallelism (C3) constraints.  The goal rim is a signed translation
of the bagging rim along the bottom normal.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateBase, HorizontalNormal, Infeasible
from .extraction import order_rim
from .geometry import (
    BottomFrame,
    Ellipse2D,
    OrderedSOI,
    as_points,
    build_bottom_frame,
    ellipse_perimeter,
    farthest_point_sampling,
    from_frame,
    pca_axis_ratio,
    pca_principal_axis,
    polyline_perimeter,
    to_frame,
    validate_vertex_set,
)

N_ELLIPSE_SAMPLES = 180  # dense samples before FPS; chord loss < 0.1% of L
ISOTROPY_WAIVER = 0.95  # PCA eigenvalue ratio above which C3 is waived


@dataclass(frozen=True)
class BaggingConstraintParams:
    """Constraint bounds for the bagging-ellipse optimization."""

    lambda1: float = 0.912
    lambda2: float = 0.007
    lambda3: float = 0.9943
    rim_perimeter: float = 0.68

    def __post_init__(self):
        if not (0.0 < self.lambda1 < 1.0):
            raise ValueError("lambda1 must be in (0, 1)")
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be >= 0")
        if not (0.0 < self.lambda3 <= 1.0):
            raise ValueError("lambda3 must be in (0, 1]")
        if self.rim_perimeter <= 0:
            raise ValueError("rim_perimeter must be positive")


@dataclass(frozen=True)
class BaggingSOI:
    """Optimized bagging rim with its frame and achieved constraint values."""

    ellipse: Ellipse2D
    frame: BottomFrame
    soi: OrderedSOI
    constraint_report: dict


def implicit_ellipse_value(ellipse, x, y):
    """Quadratic form of the rotated ellipse: < 1 inside, 1 on the boundary."""
    dx = np.asarray(x, dtype=float) - ellipse.tau_x
    dy = np.asarray(y, dtype=float) - ellipse.tau_y
    ca, sa = np.cos(ellipse.alpha), np.sin(ellipse.alpha)
    p = dx * ca + dy * sa
    q = -dx * sa + dy * ca
    return (p / ellipse.rho_a) ** 2 + (q / ellipse.rho_b) ** 2


def _vertices_xy(V_m):
    V = np.asarray(V_m, dtype=float)
    if V.ndim != 2 or V.shape[1] not in (2, 3):
        raise ValueError("expected (n, 2) or (n, 3) frame-local vertices")
    if V.shape[1] == 3 and np.abs(V[:, 2]).max() > 1e-6:
        raise ValueError("frame-local vertices must lie in the xy-plane")
    return V[:, :2]


def _circumcircle(a, b, c):
    d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    if abs(d) < 1e-18:
        return None
    ux = (
        (a @ a) * (b[1] - c[1]) + (b @ b) * (c[1] - a[1]) + (c @ c) * (a[1] - b[1])
    ) / d
    uy = (
        (a @ a) * (c[0] - b[0]) + (b @ b) * (a[0] - c[0]) + (c @ c) * (b[0] - a[0])
    ) / d
    center = np.array([ux, uy])
    return center, float(np.linalg.norm(a - center))


def minimal_enclosing_circle(points_2d):
    """Smallest circle containing all points: (center, radius).

    Brute force over pair-diameter and triple-circumscribed candidates;
    fine at the vertex counts this package deals with.
    """
    pts = np.asarray(points_2d, dtype=float)
    n = len(pts)
    if n == 1:
        return pts[0].copy(), 0.0
    tol = 1e-12
    best = None
    for i in range(n):
        for j in range(i + 1, n):
            center = 0.5 * (pts[i] + pts[j])
            r = float(np.linalg.norm(pts[i] - center))
            if np.linalg.norm(pts - center, axis=1).max() <= r + tol:
                if best is None or r < best[1]:
                    best = (center, r)
    if best is not None:
        return best
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                cc = _circumcircle(pts[i], pts[j], pts[k])
                if cc is None:
                    continue
                center, r = cc
                if np.linalg.norm(pts - center, axis=1).max() <= r + tol:
                    if best is None or r < best[1]:
                        best = (center, r)
    if best is None:
        raise ValueError("could not determine enclosing circle")
    return best


def _canonical_params(x):
    """Map a raw optimizer vector to valid ellipse parameters."""
    tau_x, tau_y, rho_a, rho_b, alpha = x
    rho_a, rho_b = abs(rho_a), abs(rho_b)
    if rho_b > rho_a:
        rho_a, rho_b = rho_b, rho_a
        alpha += 0.5 * np.pi
    return tau_x, tau_y, rho_a, rho_b, alpha % np.pi


def _penalized_objective(x, V_xy, params, d_v, waive_c3):
    tau_x, tau_y, rho_a, rho_b, alpha = _canonical_params(x)
    if rho_b < 1e-6:
        return 1e9
    L = ellipse_perimeter(rho_a, rho_b)
    cost = (L - params.rim_perimeter) ** 2

    # C1 containment
    dx = V_xy[:, 0] - tau_x
    dy = V_xy[:, 1] - tau_y
    ca, sa = np.cos(alpha), np.sin(alpha)
    p = dx * ca + dy * sa
    q = -dx * sa + dy * ca
    fe = (p / rho_a) ** 2 + (q / rho_b) ** 2
    viol = max(0.0, float(fe.max()) - params.lambda1 + 1e-9)
    # C2 concentricity
    viol += max(0.0, float(np.hypot(tau_x, tau_y)) - params.lambda2)
    # C3 parallelism; the ellipse major axis direction equals (cos a, sin a)
    if not waive_c3:
        dot = abs(ca * d_v[0] + sa * d_v[1])
        viol += max(0.0, params.lambda3 - dot)
    return cost + 10.0 * viol


def constraint_values(ellipse, V_xy, n_e=N_ELLIPSE_SAMPLES):
    """Achieved (C1 max, C2, C3) of an ellipse against frame-local vertices.

    C3 uses PCA of n_e sampled boundary points, matching the optimization
    definition; it is NaN when the vertex PCA is degenerate (C3 waived).
    """
    c1 = float(implicit_ellipse_value(ellipse, V_xy[:, 0], V_xy[:, 1]).max())
    c2 = float(np.hypot(ellipse.tau_x, ellipse.tau_y))
    if pca_axis_ratio(V_xy) > ISOTROPY_WAIVER:
        c3 = float("nan")
    else:
        d_v = pca_principal_axis(V_xy)
        d_e = pca_principal_axis(ellipse.sample(n_e))
        c3 = float(abs(d_e @ d_v))
    return c1, c2, c3


def compute_bagging_ellipse(V_m, params, rng=None):
    """Optimize the bagging ellipse in the object-bottom plane.

    Minimizes the squared perimeter mismatch against the rim perimeter R
    subject to vertex containment, concentricity and axis parallelism,
    via multi-started Nelder-Mead on an exact-penalty objective.
    """
    V_xy = _vertices_xy(V_m)
    R = params.rim_perimeter

    # fast infeasibility reject: even a circle around the minimal enclosing
    # circle scaled into the lambda1 level set needs more perimeter than R
    _, r_mec = minimal_enclosing_circle(V_xy)
    if 2.0 * np.pi * r_mec / np.sqrt(params.lambda1) > R:
        raise Infeasible(
            f"rim perimeter {R:.3f} m cannot enclose the base within lambda1"
        )

    waive_c3 = pca_axis_ratio(V_xy) > ISOTROPY_WAIVER
    if waive_c3:
        d_v = np.array([1.0, 0.0])
        alpha0 = 0.0
    else:
        try:
            d_v = pca_principal_axis(V_xy)
        except Exception as exc:
            raise DegenerateBase(str(exc)) from exc
        alpha0 = float(np.arctan2(d_v[1], d_v[0]))

    # seed half-extents along/across the principal axis, rescaled so L ~ R
    rot = np.array([[np.cos(alpha0), np.sin(alpha0)], [-np.sin(alpha0), np.cos(alpha0)]])
    proj = V_xy @ rot.T
    ea = max(float(np.abs(proj[:, 0]).max()), 1e-4)
    eb = max(float(np.abs(proj[:, 1]).max()), 1e-4)

    rng = np.random.default_rng(0) if rng is None else rng
    seeds = []
    for aspect in ((ea, eb), (1.0, 1.0)):
        for ang in (alpha0, alpha0 + 0.5 * np.pi):
            k = R / ellipse_perimeter(*aspect)
            a0, b0 = k * aspect[0], k * aspect[1]
            seeds.append([0.0, 0.0, max(a0, b0), min(a0, b0), ang])
    base = list(seeds)
    for s in base:
        jit = rng.normal(scale=[1e-4, 1e-4, 1e-3, 1e-3, 1e-2])
        seeds.append(list(np.asarray(s) + jit))

    best = None
    best_cost = np.inf
    best_aspect = np.inf
    for seed in seeds:
        res = minimize(
            _penalized_objective,
            np.asarray(seed, dtype=float),
            args=(V_xy, params, d_v, waive_c3),
            method="Nelder-Mead",
            options={"maxiter": 800, "xatol": 1e-9, "fatol": 1e-14},
        )
        cand = Ellipse2D(*_canonical_params(res.x))
        c1, c2, c3 = constraint_values(cand, V_xy)
        feasible = (
            c1 < params.lambda1
            and c2 <= params.lambda2 + 1e-9
            and (waive_c3 or c3 >= params.lambda3 - 1e-9)
        )
        if feasible:
            cost = (cand.perimeter() - R) ** 2
            aspect = cand.rho_a / cand.rho_b
            # ties in the flat objective valley go to the most compact
            # ellipse; eccentricity buys nothing once L matches R
            if cost < best_cost - 1e-12 or (
                cost < best_cost + 1e-12 and aspect < best_aspect
            ):
                best, best_cost, best_aspect = cand, cost, aspect
    if best is None:
        raise Infeasible("no ellipse satisfies C1-C3 from any start")
    return best


def make_bagging_soi(vertices, rim0, params, n_x):
    """Full bagging-rim generation: frame, ellipse, sampling, downsampling.

    ``rim0`` supplies the rim perimeter R when the params carry none
    (``rim_perimeter`` <= 0 is treated as unset).
    """
    V = validate_vertex_set(vertices)
    frame = build_bottom_frame(V)
    V_m = to_frame(V, frame)

    R = params.rim_perimeter
    if rim0 is not None:
        pts = rim0.points if isinstance(rim0, OrderedSOI) else as_points(rim0)
        R = polyline_perimeter(pts)
        params = BaggingConstraintParams(
            params.lambda1, params.lambda2, params.lambda3, R
        )

    ellipse = compute_bagging_ellipse(V_m, params)
    xy = ellipse.sample(N_ELLIPSE_SAMPLES)
    pts_m = np.column_stack([xy, np.zeros(len(xy))])
    pts_w = from_frame(pts_m, frame)
    sampled = farthest_point_sampling(pts_w, n_x) if n_x < len(pts_w) else pts_w
    soi = order_rim(sampled)

    c1, c2, c3 = constraint_values(ellipse, V_m[:, :2])
    report = {
        "c1_max": c1,
        "c2": c2,
        "c3": c3,
        "perimeter": ellipse.perimeter(),
        "rim_perimeter": params.rim_perimeter,
    }
    return BaggingSOI(ellipse=ellipse, frame=frame, soi=soi, constraint_report=report)


def generate_goal_soi(g_dag, lambda_d):
    """Translate the bagging rim along the bottom normal, toward the object.

    The sign of a_z . world-z flips the offset when the frame normal points
    away from the object interior.
    """
    if lambda_d < 0:
        raise ValueError("lambda_d must be >= 0")
    a_z = g_dag.frame.a_z
    s = float(a_z[2])  # a_z . (0, 0, 1)
    if abs(s) < 1e-6:
        raise HorizontalNormal("bottom normal is horizontal; sign undefined")
    offset = np.sign(s) * lambda_d * a_z
    return OrderedSOI(g_dag.soi.points + offset, g_dag.soi.timestamp)
