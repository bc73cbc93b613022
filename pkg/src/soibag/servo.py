"""Receding-horizon shape servoing with an online Broyden Jacobian estimate.

The rim is driven toward each planned subgoal by a quadratic MPC over
dual-gripper pose increments; the deformation Jacobian mapping those
increments to rim motion is bootstrapped by small probe motions and kept
current with rank-one Broyden corrections.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverFailure, Stalled
from .geometry import OrderedSOI, align_cyclic, polyline_perimeter

N_COMMAND = 12  # two grippers x (3 translation + 3 axis-angle increments)
U_MIN_NORM = 1e-6  # below this excitation a Broyden update is skipped


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 5
    q_weight: float = 1.0
    r_weight: float = 10.0
    u_max: np.ndarray = field(default_factory=lambda: np.full(N_COMMAND, 0.01))
    perimeter_band: float = 0.015
    perimeter_penalty: float = 1e3
    subgoal_switch_tol: float = 0.010  # meters, max per-point error
    final_tol: float = 0.003  # tighter stop criterion at the last subgoal
    broyden_rate: float = 0.5
    broyden_damping: float = 0.0  # Tikhonov term added to u'u in the update
    obs_gain: float = 1.0  # 1 trusts observations fully; <1 filters them
    step_budget: int = 2000
    stall_window: int = 150
    probe_magnitude: float = 2e-3

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.r_weight <= 0:
            raise ValueError("r_weight must be positive (R must be PD)")
        if self.q_weight < 0:
            raise ValueError("q_weight must be non-negative")
        if self.subgoal_switch_tol <= 0:
            raise ValueError("subgoal_switch_tol must be positive")
        if not (0.0 < self.broyden_rate <= 1.0):
            raise ValueError("broyden_rate must be in (0, 1]")
        if self.broyden_damping < 0:
            raise ValueError("broyden_damping must be non-negative")
        if not (0.0 < self.obs_gain <= 1.0):
            raise ValueError("obs_gain must be in (0, 1]")
        u = np.asarray(self.u_max, dtype=float).reshape(N_COMMAND)
        object.__setattr__(self, "u_max", u)


def broyden_update(J, s, u, rate, damping=0.0):
    """Rank-one secant correction of the deformation Jacobian.

    With rate 1 and zero damping the updated Jacobian satisfies J' u = s
    exactly.  A positive ``damping`` is added to u'u in the denominator,
    which attenuates corrections driven by weak excitation; useful when s
    comes from noisy observations.  Updates with negligible excitation are
    skipped and J is returned unchanged.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    s = np.asarray(s, dtype=float).reshape(-1)
    uu = float(u @ u)
    if np.sqrt(uu) <= U_MIN_NORM:
        return J
    return J + rate * np.outer(s - J @ u, u) / (uu + damping)


def build_prediction(J, T):
    """Stacked prediction operators for x_{k+1} = x_k + J u_k.

    Returns (A, B) with A = ones(T, 1) kron I and B = L kron J where L is
    the lower-triangular ones matrix, so that the stacked prediction
    A x_t + B u_bar reproduces the step-by-step rollout exactly.
    """
    n = J.shape[0]
    A = np.kron(np.ones((T, 1)), np.eye(n))
    L = np.tril(np.ones((T, T)))
    B = np.kron(L, J)
    return A, B


def _clip_resolve(H, g, u_lo, u_hi, max_rounds=5):
    """Box-constrained strongly convex QP: min 0.5 u'Hu + g'u.

    Solves unconstrained, clips, then re-solves for the free coordinates
    with the clipped ones fixed; repeats a few rounds.
    """
    n = len(g)
    u = np.linalg.solve(H, -g)
    for _ in range(max_rounds):
        clipped = np.clip(u, u_lo, u_hi)
        at_bound = (clipped <= u_lo + 1e-15) | (clipped >= u_hi - 1e-15)
        if not at_bound.any() or at_bound.all():
            u = clipped
            break
        free = ~at_bound
        rhs = -g[free] - H[np.ix_(free, at_bound)] @ clipped[at_bound]
        u_new = clipped.copy()
        u_new[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        if np.allclose(u_new, u, atol=1e-14):
            u = np.clip(u_new, u_lo, u_hi)
            break
        u = u_new
    return np.clip(u, u_lo, u_hi)


def _projected_gradient(H, g, u_lo, u_hi, iters=60):
    """Fallback: projected gradient from zero; cost never rises above J(0)."""
    lip = np.linalg.eigvalsh(H).max()
    step = 1.0 / lip
    u = np.zeros_like(g)
    for _ in range(iters):
        u = np.clip(u - step * (H @ u + g), u_lo, u_hi)
    return u


def _perimeter_gradient(pts):
    """Gradient of the closed polyline perimeter with respect to the points."""
    fwd = np.roll(pts, -1, axis=0) - pts
    fwd_n = fwd / np.linalg.norm(fwd, axis=1, keepdims=True)
    bwd_n = np.roll(fwd_n, 1, axis=0)
    return bwd_n - fwd_n


def mpc_step(x_t, g_next, J, cfg, rim_perimeter_ref=None):
    """One receding-horizon solve; returns the first command block.

    Cost: stacked tracking error under Q plus input effort under R, with a
    soft quadratic penalty on predicted rim perimeters leaving the allowed
    band.  Box limits are handled by clipped re-solves of the quadratic.
    """
    x = x_t.as_vector() if isinstance(x_t, OrderedSOI) else np.asarray(x_t, float)
    g = g_next.as_vector() if isinstance(g_next, OrderedSOI) else np.asarray(g_next, float)
    T = cfg.horizon
    A, B = build_prediction(J, T)
    k_bar = np.tile(g, T)
    e0 = A @ x - k_bar

    H = cfg.q_weight * (B.T @ B) + cfg.r_weight * np.eye(N_COMMAND * T)
    grad = cfg.q_weight * (B.T @ e0)

    if rim_perimeter_ref is not None:
        # linearized perimeter regulation: steer each predicted rim's
        # polyline perimeter back toward the reference
        n3 = len(x)
        g_p = _perimeter_gradient(x.reshape(-1, 3)).ravel()
        p_off = polyline_perimeter(x.reshape(-1, 3)) - rim_perimeter_ref
        w = cfg.perimeter_penalty
        for k in range(T):
            b_k = B[k * n3 : (k + 1) * n3, :].T @ g_p
            H += w * np.outer(b_k, b_k)
            grad += w * p_off * b_k
    u_lo = -np.tile(cfg.u_max, T)
    u_hi = np.tile(cfg.u_max, T)

    def cost(u_bar):
        # quadratic model the solver minimizes, plus the hard band penalty
        # on the nonlinearly evaluated predicted perimeters
        c = float(u_bar @ (H @ u_bar) + 2.0 * (grad @ u_bar))
        if rim_perimeter_ref is not None:
            x_pred = (A @ x + B @ u_bar).reshape(T, -1, 3)
            for xs in x_pred:
                p = polyline_perimeter(xs)
                over = abs(p / rim_perimeter_ref - 1.0) - cfg.perimeter_band
                if over > 0:
                    c += cfg.perimeter_penalty * over ** 2
        return c

    u_bar = _clip_resolve(H, grad, u_lo, u_hi)
    baseline = cost(np.zeros_like(u_bar))
    if cost(u_bar) > baseline + 1e-12:
        u_bar = _projected_gradient(H, grad, u_lo, u_hi)
    # soft perimeter constraint: back off along the solve direction if the
    # predicted rims leave the band and shrinking helps
    if rim_perimeter_ref is not None and cost(u_bar) > baseline + 1e-12:
        for scale in (0.5, 0.25, 0.1, 0.0):
            if cost(scale * u_bar) <= baseline + 1e-12:
                u_bar = scale * u_bar
                break
    if cost(u_bar) > baseline + 1e-12:
        raise SolverFailure("MPC solve did not improve on the zero command")
    return u_bar[:N_COMMAND]


def bootstrap_jacobian(plant, x0, cfg):
    """Finite-difference initial Jacobian from 12 small probe motions."""
    n = 3 * len(x0)
    J = np.zeros((n, N_COMMAND))
    x = x0.as_vector()
    for i in range(N_COMMAND):
        delta = cfg.probe_magnitude
        u = np.zeros(N_COMMAND)
        u[i] = delta
        x_plus = plant.apply(u).as_vector()
        J[:, i] = (x_plus - x) / delta
        x_back = plant.apply(-u).as_vector()
        x = x_back  # plant returns near x0; keep the realized state
    return J


def _align_goal(goal, x, ellipse=None):
    """Re-index the subgoal to match the observed rim.

    With the subgoal's ellipse available, each observed point is paired
    with the goal-ellipse point at its own parameter angle, so tangential
    offsets (which the grippers cannot control) do not register as error.
    Otherwise falls back to the best discrete cyclic shift.
    """
    if ellipse is None:
        return OrderedSOI(align_cyclic(goal.points, x.points), goal.timestamp)
    pts = x.points
    d = pts - ellipse.c
    theta = np.arctan2((d @ ellipse.v) / ellipse.rho_v, (d @ ellipse.u) / ellipse.rho_u)
    aligned = (
        ellipse.c
        + ellipse.rho_u * np.cos(theta)[:, None] * ellipse.u
        + ellipse.rho_v * np.sin(theta)[:, None] * ellipse.v
    )
    return OrderedSOI(aligned, goal.timestamp)


def run_controller(path, plant, cfg, rim_perimeter_ref=None, J0=None):
    """Track a planned subgoal chain on a plant; returns the step log.

    The loop observes the rim, solves the MPC, applies the first command,
    and refreshes the Jacobian by a Broyden update.  Subgoals advance when
    the max per-point error drops below the switch tolerance; a watchdog
    raises Stalled when no progress is made over the configured window.
    """
    raw = path.subgoals() if hasattr(path, "subgoals") else list(path)
    subgoals = [
        (sg.soi, sg.ellipse) if hasattr(sg, "ellipse") else (sg, None)
        for sg in raw
    ]

    x = plant.reset()
    if J0 is None:
        J = bootstrap_jacobian(plant, x, cfg)
        x = plant.apply(np.zeros(N_COMMAND))
    else:
        J = np.asarray(J0, dtype=float)

    log = []
    goal_idx = 0
    best_err = np.inf
    best_mean = np.inf
    since_progress = 0

    for step in range(cfg.step_budget):
        # re-pair the subgoal with the current rim every step so tangential
        # drift, which the grippers cannot correct, never registers as error
        aligned_goal = _align_goal(subgoals[goal_idx][0], x, subgoals[goal_idx][1])
        err_vec = aligned_goal.points - x.points
        err = float(np.linalg.norm(err_vec, axis=1).max())
        mean_err = float(np.linalg.norm(err_vec, axis=1).mean())

        # advance through every subgoal already satisfied
        while err < cfg.subgoal_switch_tol and goal_idx < len(subgoals) - 1:
            goal_idx += 1
            aligned_goal = _align_goal(subgoals[goal_idx][0], x, subgoals[goal_idx][1])
            err_vec = aligned_goal.points - x.points
            err = float(np.linalg.norm(err_vec, axis=1).max())
            mean_err = float(np.linalg.norm(err_vec, axis=1).mean())
            best_err = np.inf
            best_mean = np.inf
            since_progress = 0

        final = goal_idx == len(subgoals) - 1
        record = {
            "step": step,
            "soi": x.points.tolist(),
            "subgoal_index": goal_idx,
            "max_error": err,
            "mean_error": mean_err,
            "jacobian_cond": float(np.linalg.cond(J)),
        }

        if final and err < cfg.final_tol:
            record["command"] = [0.0] * N_COMMAND
            log.append(record)
            return log

        u = mpc_step(x, aligned_goal, J, cfg, rim_perimeter_ref)
        record["command"] = u.tolist()
        log.append(record)

        x_new = plant.apply(u)
        if cfg.obs_gain < 1.0:
            # predict-correct blend: lean on the local model and let the
            # observation pull the estimate, which keeps measurement noise
            # out of the Broyden corrections
            pred = x.as_vector() + J @ u
            blend = pred + cfg.obs_gain * (x_new.as_vector() - pred)
            x_new = OrderedSOI(blend.reshape(-1, 3), x_new.timestamp)
        s = x_new.as_vector() - x.as_vector()
        J = broyden_update(J, s, u, cfg.broyden_rate, cfg.broyden_damping)
        x = x_new

        improved = err < best_err - 1e-6 or mean_err < best_mean - 1e-6
        best_err = min(best_err, err)
        best_mean = min(best_mean, mean_err)
        if improved:
            since_progress = 0
        else:
            since_progress += 1
            if since_progress > cfg.stall_window:
                if final:
                    # plant cannot get closer; stop at its best achievable
                    return log
                raise Stalled(
                    f"no progress over {cfg.stall_window} steps at subgoal {goal_idx}"
                )
    return log  # step budget exhausted; caller judges success from the log
