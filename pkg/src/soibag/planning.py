"""Constrained bidirectional RRT over elliptical rim states.

Sampled rim states are regularized onto exact 3D ellipses whose perimeter
stays inside a tight band around the bag rim perimeter R and whose center
stays near the sample centroid; two trees grown from the start and goal
rims are connected once they come within the connect threshold.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import PlanningFailed, RegularizationFailed
from .geometry import (
    Ellipse3D,
    OrderedSOI,
    align_cyclic,
    as_points,
    chamfer_distance,
    ellipse_perimeter,
    fit_rim_plane,
    polyline_perimeter,
    sample_ellipse3d,
    soi_distance,
)

N_REG_SAMPLES = 90  # ellipse samples used by the regularization objective
SAMPLE_JITTER = 1e-3  # per-point noise on sampled rims before regularization


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned cuboid with a safety margin."""

    lo: np.ndarray
    hi: np.ndarray
    margin: float = 0.0

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(3)
        hi = np.asarray(self.hi, dtype=float).reshape(3)
        if not (lo < hi).all():
            raise ValueError("obstacle min corner must be below max corner")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def inflated(self):
        return self.lo - self.margin, self.hi + self.margin


@dataclass(frozen=True)
class PlannerConfig:
    max_iterations: int = 5000
    step_size: float = 0.02
    connect_epsilon: float = 0.01
    lambda4: float = 0.002
    lambda5: float = 0.021
    sample_bounds: tuple = ((-0.5, -0.5, 0.0), (0.5, 0.5, 1.0))
    rng_seed: int = 0
    goal_bias: float = 0.1
    shortcut: bool = True

    def __post_init__(self):
        if self.step_size <= 0 or self.connect_epsilon <= 0:
            raise ValueError("step_size and connect_epsilon must be positive")
        if self.lambda4 <= 0 or self.lambda5 < 0:
            raise ValueError("lambda4 must be > 0 and lambda5 >= 0")


@dataclass
class PathNode:
    soi: OrderedSOI
    ellipse: Ellipse3D
    parent: "PathNode | None" = None


@dataclass(frozen=True)
class BaggingPath:
    """Planned subgoal chain, split at the bagging rim."""

    pre_bagging: list
    bagging: list

    def subgoals(self):
        """All path nodes with the junction appearing once."""
        return list(self.pre_bagging) + list(self.bagging[1:])


# ---------------------------------------------------------------------------
# collision checking


def _segment_hits_box(p0, p1, lo, hi):
    """Slab test: does segment p0-p1 intersect the box [lo, hi]?"""
    d = p1 - p0
    tmin, tmax = 0.0, 1.0
    for ax in range(3):
        if abs(d[ax]) < 1e-15:
            if p0[ax] < lo[ax] or p0[ax] > hi[ax]:
                return False
        else:
            t1 = (lo[ax] - p0[ax]) / d[ax]
            t2 = (hi[ax] - p0[ax]) / d[ax]
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return False
    return True


def collision_check(soi, obstacles):
    """True iff no rim point and no chord between consecutive points
    intersects any margin-inflated cuboid."""
    pts = soi.points if isinstance(soi, OrderedSOI) else as_points(soi)
    if not obstacles:
        return True
    nxt = np.roll(pts, -1, axis=0)
    for obs in obstacles:
        lo, hi = obs.inflated()
        inside = ((pts >= lo) & (pts <= hi)).all(axis=1)
        if inside.any():
            return False
        for p0, p1 in zip(pts, nxt):
            if _segment_hits_box(p0, p1, lo, hi):
                return False
    return True


# ---------------------------------------------------------------------------
# regularization


def _build_ellipse(c, n0, e1, e2, t1, t2, psi, log_ratio, R):
    """Assemble a perimeter-normalized ellipse from free parameters.

    The radii are scaled so the N_REG_SAMPLES-point polyline perimeter of
    the ellipse equals R exactly, which satisfies the perimeter-band
    constraint by construction.
    """
    n = n0 + t1 * e1 + t2 * e2
    n = n / np.linalg.norm(n)
    b1 = e1 - (e1 @ n) * n
    b1 = b1 / np.linalg.norm(b1)
    b2 = np.cross(n, b1)
    u = np.cos(psi) * b1 + np.sin(psi) * b2
    v = np.cross(n, u)
    ratio = np.exp(log_ratio)
    ru, rv = 1.0, ratio
    if rv > ru:
        ru, rv = rv, ru
        u, v = v, -u
    probe = Ellipse3D(c, u, v, ru, rv)
    scale = R / polyline_perimeter(sample_ellipse3d(probe, N_REG_SAMPLES))
    return Ellipse3D(c, u, v, ru * scale, rv * scale)


def _direct_ellipse_fit_2d(xy):
    """Stable direct least-squares conic fit; returns (cx, cy, a, b, phi).

    Falls back to a covariance-based estimate when the conic is not an
    ellipse or the system is singular.
    """
    x, y = xy[:, 0], xy[:, 1]
    try:
        D1 = np.column_stack([x * x, x * y, y * y])
        D2 = np.column_stack([x, y, np.ones_like(x)])
        S1 = D1.T @ D1
        S2 = D1.T @ D2
        S3 = D2.T @ D2
        T = -np.linalg.solve(S3, S2.T)
        M = S1 + S2 @ T
        C1 = np.array([[0.0, 0.0, 2.0], [0.0, -1.0, 0.0], [2.0, 0.0, 0.0]])
        M = np.linalg.solve(C1, M)
        vals, vecs = np.linalg.eig(M)
        cond = 4.0 * vecs[0] * vecs[2] - vecs[1] ** 2
        idx = np.flatnonzero(np.isreal(vals) & (cond > 0))
        if len(idx) == 0:
            raise np.linalg.LinAlgError("no elliptical solution")
        a1 = np.real(vecs[:, idx[0]])
        A, B, C = a1
        D, E, F = T @ a1
        den = B * B - 4.0 * A * C
        cx = (2.0 * C * D - B * E) / den
        cy = (2.0 * A * E - B * D) / den
        # recenter: A x'^2 + B x'y' + C y'^2 = -Q(c); eigenvectors of the
        # quadratic form give the axes without angle-branch ambiguity
        Qc = A * cx * cx + B * cx * cy + C * cy * cy + D * cx + E * cy + F
        w, V = np.linalg.eigh(np.array([[A, 0.5 * B], [0.5 * B, C]]))
        lam = -Qc / w
        if not (lam > 0).all():
            raise np.linalg.LinAlgError("degenerate conic")
        major = int(np.argmax(lam))
        ra, rb = np.sqrt(lam[major]), np.sqrt(lam[1 - major])
        phi = np.arctan2(V[1, major], V[0, major])
        if not np.isfinite([cx, cy, ra, rb, phi]).all():
            raise np.linalg.LinAlgError("degenerate conic")
        return float(cx), float(cy), float(ra), float(rb), float(phi)
    except np.linalg.LinAlgError:
        c = xy.mean(axis=0)
        d = xy - c
        cov = d.T @ d / len(d)
        w, vecs = np.linalg.eigh(cov)
        phi = float(np.arctan2(vecs[1, 1], vecs[0, 1]))
        ra = float(np.sqrt(2.0 * max(w[1], 1e-12)))
        rb = float(np.sqrt(2.0 * max(w[0], 1e-12)))
        return float(c[0]), float(c[1]), ra, max(rb, 1e-6), phi


def regularize(X_rand, lambda4, lambda5, R, n_points=None, polish=True):
    """Fit the closest feasible ellipse to a sampled rim.

    Seeds from a plane projection plus a direct least-squares conic fit,
    then optionally polishes the Chamfer distance between the ellipse
    samples and the input points by a short simplex search.  The perimeter
    band (C4) is met by construction (radii rescaled to the reference R)
    and the center is kept within lambda5 of the input centroid (C5).
    Returns the fitted ellipse and an n_points rim resampled from it.
    """
    X = as_points(X_rand)
    if len(X) < 5:
        raise RegularizationFailed(f"need >= 5 points, got {len(X)}")
    if n_points is None:
        n_points = len(X)
    try:
        cbar, n0 = fit_rim_plane(X)
    except Exception as exc:
        raise RegularizationFailed(str(exc)) from exc

    # tangent basis at the initial normal
    ref = np.array([1.0, 0.0, 0.0])
    if abs(n0 @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = ref - (ref @ n0) * n0
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n0, e1)

    d = X - cbar
    xy = np.column_stack([d @ e1, d @ e2])
    cx, cy, ra, rb, phi = _direct_ellipse_fit_2d(xy)
    ratio0 = min(max(rb / ra, 0.05), 1.0)
    seed = np.array([cx * 1.0, cy, 0.0, 0.0, 0.0, phi, np.log(ratio0)])
    # seed center offset expressed in the world tangent basis
    seed[:3] = cx * e1 + cy * e2

    def objective(p):
        dc = p[:3]
        nd = np.linalg.norm(dc)
        penalty = 0.0
        if nd > lambda5:
            penalty = 10.0 * (nd - lambda5)
            dc = dc * (lambda5 / nd) if nd > 0 else dc
        try:
            ell = _build_ellipse(cbar + dc, n0, e1, e2, p[3], p[4], p[5], p[6], R)
        except Exception:
            return 1e9
        Y = sample_ellipse3d(ell, N_REG_SAMPLES)
        return chamfer_distance(Y, X) + penalty

    best, best_cost = seed, objective(seed)
    if best_cost >= 1e9:
        raise RegularizationFailed("no feasible ellipse found from the seed")
    if polish:
        res = minimize(
            objective,
            seed,
            method="Nelder-Mead",
            options={"maxiter": 300, "xatol": 1e-8, "fatol": 1e-14},
        )
        if res.fun < best_cost:
            best, best_cost = res.x, res.fun

    dc = best[:3]
    nd = np.linalg.norm(dc)
    if nd > lambda5:
        dc = dc * (lambda5 / nd)
    ellipse = _build_ellipse(cbar + dc, n0, e1, e2, best[3], best[4], best[5], best[6], R)
    soi = OrderedSOI(_resample_aligned(ellipse, X, n_points))
    return ellipse, soi


def _resample_aligned(ellipse, X, n_points):
    """Uniform ellipse samples phase-aligned with the input rim: point 0
    sits at the ellipse angle of X[0] and the traversal direction follows
    the input ordering, so index correspondence survives regularization."""
    d0 = X[0] - ellipse.c
    t0 = np.arctan2((d0 @ ellipse.v) / ellipse.rho_v, (d0 @ ellipse.u) / ellipse.rho_u)
    d1 = X[1] - ellipse.c
    t1 = np.arctan2((d1 @ ellipse.v) / ellipse.rho_v, (d1 @ ellipse.u) / ellipse.rho_u)
    sign = 1.0 if np.angle(np.exp(1j * (t1 - t0))) >= 0 else -1.0
    theta = t0 + sign * np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    return (
        ellipse.c
        + ellipse.rho_u * np.cos(theta)[:, None] * ellipse.u
        + ellipse.rho_v * np.sin(theta)[:, None] * ellipse.v
    )


def node_perimeter(node_or_ellipse):
    """Perimeter measure used for the C4 band: polyline of the regular
    N_REG_SAMPLES-point discretization of the node's ellipse."""
    ell = (
        node_or_ellipse.ellipse
        if isinstance(node_or_ellipse, PathNode)
        else node_or_ellipse
    )
    return polyline_perimeter(sample_ellipse3d(ell, N_REG_SAMPLES))


# ---------------------------------------------------------------------------
# sampling and extension


def _rotation_between(a, b):
    """Shortest-arc rotation matrix taking unit vector a to unit vector b."""
    c = float(np.clip(a @ b, -1.0, 1.0))
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: rotate pi about any perpendicular axis
        perp = np.array([1.0, 0.0, 0.0])
        if abs(a @ perp) > 0.9:
            perp = np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, perp)
        axis /= np.linalg.norm(axis)
        return _axis_angle(axis, np.pi)
    axis = axis / s
    return _axis_angle(axis, np.arctan2(s, c))


def _axis_angle(axis, angle):
    K = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def interpolate_ellipse(e0, e1, t):
    """Geodesic-style interpolation of ellipse parameters.

    Centers lerp, plane normals rotate along the shortest arc, the in-plane
    axis angle and radii lerp.  Result is an exact ellipse (not yet
    perimeter-normalized).
    """
    n0, n1 = e0.normal, e1.normal
    R_full = _rotation_between(n0, n1)
    c = float(np.clip(n0 @ n1, -1.0, 1.0))
    total = np.arctan2(np.linalg.norm(np.cross(n0, n1)), c)
    if total < 1e-12:
        R_t = np.eye(3)
        n_t = n0
    else:
        axis = np.cross(n0, n1)
        axis /= np.linalg.norm(axis)
        R_t = _axis_angle(axis, t * total)
        n_t = R_t @ n0

    # residual in-plane angle between the transported axis and the target,
    # taken modulo pi (ellipse axes are sign/order symmetric)
    u0t = R_full @ e0.u
    cosang = float(np.clip(u0t @ e1.u, -1.0, 1.0))
    sinang = float(np.clip(np.cross(u0t, e1.u) @ n1, -1.0, 1.0))
    phi = np.arctan2(sinang, cosang)
    if phi > np.pi / 2:
        phi -= np.pi
    elif phi < -np.pi / 2:
        phi += np.pi

    u_t = _axis_angle(n_t, t * phi) @ (R_t @ e0.u)
    u_t /= np.linalg.norm(u_t)
    v_t = np.cross(n_t, u_t)
    c_t = (1.0 - t) * e0.c + t * e1.c
    ru = (1.0 - t) * e0.rho_u + t * e1.rho_u
    rv = (1.0 - t) * e0.rho_v + t * e1.rho_v
    if rv > ru:
        ru, rv = rv, ru
        u_t, v_t = v_t, -u_t
    return Ellipse3D(c_t, u_t, v_t, ru, rv)


def sample_rim_state(rng, cfg, axis, R, n_x):
    """Draw a random elliptical rim: center in bounds, normal biased toward
    the start-goal axis, radii scaled to the reference perimeter, points
    jittered before regularization."""
    lo = np.asarray(cfg.sample_bounds[0], dtype=float)
    hi = np.asarray(cfg.sample_bounds[1], dtype=float)
    center = rng.uniform(lo, hi)
    raw = rng.normal(size=3)
    raw /= np.linalg.norm(raw)
    if rng.uniform() < 0.7 and np.linalg.norm(axis) > 1e-9:
        n = axis / np.linalg.norm(axis) + 0.3 * raw
    else:
        n = raw
    n /= np.linalg.norm(n)

    ratio = rng.uniform(0.6, 1.0)
    rho_u = R / ellipse_perimeter(1.0, ratio)
    rho_v = rho_u * ratio

    ref = np.array([1.0, 0.0, 0.0])
    if abs(n @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = ref - (ref @ n) * n
    u /= np.linalg.norm(u)
    psi = rng.uniform(0.0, np.pi)
    u = _axis_angle(n, psi) @ u
    v = np.cross(n, u)
    ell = Ellipse3D(center, u, v, rho_u, rho_v)
    pts = sample_ellipse3d(ell, n_x)
    return pts + rng.normal(scale=SAMPLE_JITTER, size=pts.shape)


def _extend(tree, target_pts, obstacles, cfg, R, n_x):
    """Greedy constrained extension of a tree toward a target rim.

    Walks from the nearest node in bounded point-space increments toward
    the index-aligned target, regularizing and collision-checking each
    step; returns the last node added (or None).
    """
    target_soi = OrderedSOI(target_pts)
    nearest = min(tree, key=lambda nd: soi_distance(nd.soi, target_soi))
    dist = soi_distance(nearest.soi, target_soi)
    if dist < 1e-12:
        return None
    Y = align_cyclic(target_pts, nearest.soi.points)
    X0 = nearest.soi.points
    n_steps = max(1, int(np.ceil(dist / cfg.step_size)))
    current = nearest
    added = None
    for k in range(1, n_steps + 1):
        t = k / n_steps
        blend = (1.0 - t) * X0 + t * Y
        try:
            # blended states stay close to an exact ellipse; the direct-fit
            # seed is already tight, skip the simplex polish
            ell, soi = regularize(
                blend, cfg.lambda4, cfg.lambda5, R, n_x, polish=False
            )
        except RegularizationFailed:
            break
        if soi_distance(current.soi, soi) > cfg.step_size + cfg.connect_epsilon:
            break
        if not collision_check(soi, obstacles):
            break
        node = PathNode(soi=soi, ellipse=ell, parent=current)
        tree.append(node)
        current = node
        added = node
    return added


def _chain(node):
    out = []
    while node is not None:
        out.append(node)
        node = node.parent
    return out[::-1]


def _anchor_node(soi, cfg, R):
    pts = soi.points if isinstance(soi, OrderedSOI) else as_points(soi)
    ell, reg = regularize(pts, cfg.lambda4, cfg.lambda5, R, len(pts))
    return PathNode(soi=reg, ellipse=ell, parent=None)


def plan_segment(g_start, g_goal, obstacles, cfg, R=None, rng=None):
    """Bidirectional constrained planning between two rim states.

    Returns the node chain from start to goal; raises PlanningFailed when
    the iteration budget runs out.
    """
    start_pts = g_start.points if isinstance(g_start, OrderedSOI) else as_points(g_start)
    goal_pts = g_goal.points if isinstance(g_goal, OrderedSOI) else as_points(g_goal)
    n_x = len(start_pts)
    if R is None:
        R = 0.5 * (polyline_perimeter(start_pts) + polyline_perimeter(goal_pts))
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng

    start_root = _anchor_node(g_start, cfg, R)
    goal_root = _anchor_node(g_goal, cfg, R)

    if soi_distance(start_root.soi, goal_root.soi) < cfg.connect_epsilon:
        return [start_root]

    t_start = [start_root]
    t_goal = [goal_root]
    axis = goal_root.ellipse.c - start_root.ellipse.c

    for _ in range(cfg.max_iterations):
        if rng.uniform() < cfg.goal_bias:
            x_rand = goal_root.soi.points
        else:
            x_rand = sample_rim_state(rng, cfg, axis, R, n_x)
        try:
            _, soi_rand = regularize(
                x_rand, cfg.lambda4, cfg.lambda5, R, n_x, polish=False
            )
        except RegularizationFailed:
            continue
        target = soi_rand.points

        new_start = _extend(t_start, target, obstacles, cfg, R, n_x)
        if new_start is not None:
            nearest_goal = min(
                t_goal, key=lambda nd: soi_distance(nd.soi, new_start.soi)
            )
            if soi_distance(new_start.soi, nearest_goal.soi) < cfg.connect_epsilon:
                return _connect(new_start, nearest_goal)

        new_goal = _extend(t_goal, target, obstacles, cfg, R, n_x)
        if new_goal is not None:
            nearest_start = min(
                t_start, key=lambda nd: soi_distance(nd.soi, new_goal.soi)
            )
            if soi_distance(new_goal.soi, nearest_start.soi) < cfg.connect_epsilon:
                return _connect(nearest_start, new_goal)

    raise PlanningFailed(f"no path within {cfg.max_iterations} iterations")


def _connect(start_side, goal_side):
    """Join the two tree branches into one start-to-goal chain."""
    forward = _chain(start_side)
    backward = _chain(goal_side)[::-1]  # goal-tree chain ends at the goal root
    return forward + backward


def _bridge(a, b, obstacles, cfg, R):
    """Regularized interpolants between two nodes at step_size spacing, or
    None when any of them is infeasible."""
    Y = align_cyclic(b.soi.points, a.soi.points)
    X0 = a.soi.points
    dist = soi_distance(a.soi, b.soi)
    steps = max(1, int(np.ceil(dist / cfg.step_size)))
    nodes = []
    for k in range(1, steps):
        blend = (1.0 - k / steps) * X0 + (k / steps) * Y
        try:
            ell, soi = regularize(
                blend, cfg.lambda4, cfg.lambda5, R, len(X0), polish=False
            )
        except RegularizationFailed:
            return None
        if not collision_check(soi, obstacles):
            return None
        nodes.append(PathNode(soi=soi, ellipse=ell))
    return nodes


def shortcut_path(nodes, obstacles, cfg, R):
    """Greedy shortcut pass: replace detours by direct regularized bridges
    whenever the bridge stays feasible, then re-link the parent chain."""
    if len(nodes) <= 2:
        return list(nodes)
    out = [nodes[0]]
    i = 0
    while i < len(nodes) - 1:
        advanced = False
        for j in range(len(nodes) - 1, i + 1, -1):
            bridge = _bridge(nodes[i], nodes[j], obstacles, cfg, R)
            if bridge is not None:
                out.extend(bridge)
                out.append(nodes[j])
                i = j
                advanced = True
                break
        if not advanced:
            out.append(nodes[i + 1])
            i += 1
    for prev, node in zip(out, out[1:]):
        node.parent = prev
    return out


def _mean_perimeter(a, b):
    pts_a = a.points if isinstance(a, OrderedSOI) else as_points(a)
    pts_b = b.points if isinstance(b, OrderedSOI) else as_points(b)
    return 0.5 * (polyline_perimeter(pts_a) + polyline_perimeter(pts_b))


def plan_full(g0, g_dag, g_star, obstacles, cfg, R=None):
    """Plan both bagging phases; the junction node appears exactly once."""
    rng = np.random.default_rng(cfg.rng_seed)
    R_pre = R if R is not None else _mean_perimeter(g0, g_dag)
    R_bag = R if R is not None else _mean_perimeter(g_dag, g_star)
    try:
        pre = plan_segment(g0, g_dag, obstacles, cfg, R=R_pre, rng=rng)
    except PlanningFailed as exc:
        raise PlanningFailed(str(exc), segment="pre_bagging") from exc
    try:
        bagging = plan_segment(g_dag, g_star, obstacles, cfg, R=R_bag, rng=rng)
    except PlanningFailed as exc:
        raise PlanningFailed(str(exc), segment="bagging") from exc
    if cfg.shortcut:
        pre = shortcut_path(pre, obstacles, cfg, R_pre)
        bagging = shortcut_path(bagging, obstacles, cfg, R_bag)
    return BaggingPath(pre_bagging=pre, bagging=bagging)
