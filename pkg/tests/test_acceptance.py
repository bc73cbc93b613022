"""Acceptance suite: one test per acceptance criterion.

Each test prints a single summary line (visible with ``pytest -v -rA`` or
``-s``) stating the criterion, the measured values, and the verdict.
"""

import time

import numpy as np
import pytest

from soibag.errors import PlanningFailed
from soibag.extraction import GmmConfig, extract_soi, fit_gmm
from soibag.generation import (
    BaggingConstraintParams,
    compute_bagging_ellipse,
    constraint_values,
    generate_goal_soi,
    make_bagging_soi,
)
from soibag.geometry import (
    ellipse_perimeter,
    ellipse_perimeter_quadrature,
    polyline_perimeter,
)
from soibag.harness import OBJECT_PRESETS, run_pipeline, scenario_from_dict
from soibag.planning import (
    Obstacle,
    collision_check,
    node_perimeter,
    plan_full,
)
from soibag.servo import broyden_update, build_prediction
from soibag.simulator import BagSim


def _report(name, ok, detail):
    verdict = "PASS" if ok else "FAIL"
    print(f"[{verdict}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# criterion 1: extraction accuracy


def test_criterion_1_extraction_accuracy():
    rng = np.random.default_rng(0)
    n_pts, outlier_frac = 2000, 0.2
    n_out = int(outlier_frac * n_pts)
    t = rng.uniform(0.0, 2.0 * np.pi, n_pts - n_out)
    rim = np.column_stack(
        [0.12 * np.cos(t), 0.09 * np.sin(t), np.full(n_pts - n_out, 0.4)]
    )
    cloud = rim + rng.normal(scale=0.005, size=rim.shape)
    lo, hi = cloud.min(axis=0) - 0.05, cloud.max(axis=0) + 0.05
    cloud = np.vstack([cloud, rng.uniform(lo, hi, size=(n_out, 3))])

    cfg = GmmConfig(n_x=32)
    t0 = time.perf_counter()
    model = fit_gmm(cloud, cfg)
    soi = extract_soi(cloud, cfg)
    elapsed = time.perf_counter() - t0

    # RMSE against the generator ellipse (nearest point on the true rim)
    dense_t = np.linspace(0.0, 2.0 * np.pi, 20000, endpoint=False)
    curve = np.column_stack(
        [0.12 * np.cos(dense_t), 0.09 * np.sin(dense_t), np.full(20000, 0.4)]
    )
    d = np.linalg.norm(soi.points[:, None] - curve[None], axis=2).min(axis=1)
    rmse = float(np.sqrt((d ** 2).mean()))

    monotone = bool((np.diff(model.log_likelihoods) >= -1e-9).all())
    ok = rmse < 0.010 and monotone and elapsed < 2.0
    _report(
        "criterion 1 (extraction accuracy)",
        ok,
        f"rmse {rmse * 1000:.2f} mm (< 10), loglik non-decreasing {monotone}, "
        f"runtime {elapsed:.2f} s (< 2)",
    )


# ---------------------------------------------------------------------------
# criterion 2: bagging-SOI feasibility over randomized base shapes


def _base_shapes(rng):
    """12 randomized base-shape generators, centered at their centroid.

    All shapes keep the minimal enclosing circle small enough that the
    rim perimeter R = 0.68 m can enclose them.
    """

    def center(V):
        V = np.asarray(V, dtype=float)
        return V - V.mean(axis=0)

    def polygon(n, rx, ry):
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return center(np.column_stack([rx * np.cos(t), ry * np.sin(t)]))

    u = rng.uniform
    return [
        center([[-u(0.04, 0.06), -u(0.015, 0.03)], [u(0.04, 0.06), -u(0.015, 0.03)],
                [u(0.04, 0.06), u(0.015, 0.03)], [-u(0.04, 0.06), u(0.015, 0.03)]]),
        center([[-0.035, -0.035], [0.035, -0.035], [0.035, 0.035], [-0.035, 0.035]])
        * u(0.8, 1.2),
        center([[u(0.045, 0.06), 0.0], [-0.025, u(0.035, 0.05)],
                [-0.025, -u(0.035, 0.05)]]),
        polygon(6, u(0.04, 0.06), u(0.04, 0.06) * 0.999),
        polygon(5, u(0.04, 0.055), u(0.04, 0.055) * 0.999),
        polygon(12, u(0.05, 0.065), u(0.03, 0.045)),
        polygon(12, u(0.04, 0.05), u(0.04, 0.05) * 0.999),
        center([[-0.05, -0.025], [0.05, -0.025], [0.032, 0.025], [-0.032, 0.025]])
        * u(0.9, 1.15),
        center([[u(0.05, 0.065), 0], [0, u(0.02, 0.035)],
                [-u(0.05, 0.065), 0], [0, -u(0.02, 0.035)]]),
        polygon(8, u(0.055, 0.068), u(0.025, 0.04)),
        polygon(10, u(0.045, 0.06), u(0.035, 0.05)),
        center([[-0.07, -0.025], [-0.01, -0.025], [0.012, -0.033], [0.07, -0.033],
                [0.07, 0.033], [0.012, 0.033], [-0.01, 0.025], [-0.07, 0.025]])
        * u(0.9, 1.05),
    ]


def test_criterion_2_bagging_feasibility():
    params = BaggingConstraintParams()  # lambda (0.912, 0.007, 0.9943), R 0.68
    rng = np.random.default_rng(1)
    trials = 0
    worst_gap = 0.0
    worst_time = 0.0
    for round_idx in range(17):  # 12 shapes x 17 rounds = 204 trials
        for V_xy in _base_shapes(rng):
            V = np.column_stack([V_xy, np.zeros(len(V_xy))])
            t0 = time.perf_counter()
            ell = compute_bagging_ellipse(V, params)
            dt = time.perf_counter() - t0
            c1, c2, c3 = constraint_values(ell, V_xy)
            assert c1 < params.lambda1
            assert c2 <= params.lambda2 + 1e-9
            assert np.isnan(c3) or params.lambda3 - 1e-9 <= c3 <= 1.0 + 1e-9
            gap = abs(ell.perimeter() - params.rim_perimeter)
            assert gap < 0.005
            worst_gap = max(worst_gap, gap)
            worst_time = max(worst_time, dt)
            trials += 1
    ok = trials >= 200 and worst_time < 1.0
    _report(
        "criterion 2 (bagging feasibility)",
        ok,
        f"{trials} trials, 100% C1-C3 feasible, worst |L-R| "
        f"{worst_gap * 1000:.3f} mm (< 5), worst runtime {worst_time:.2f} s (< 1)",
    )


# ---------------------------------------------------------------------------
# criterion 3: planner reliability over a randomized obstacle suite


def _planner_scene(preset, seed):
    """One randomized desk-scale scene: preset object, one lateral obstacle."""
    sc = scenario_from_dict({"object": preset, "seed": seed})
    plant = BagSim(cfg=sc.bag, seed=seed)
    g0 = plant.reset()
    g_dag = make_bagging_soi(sc.vertices, g0, sc.constraints, sc.bag.n_x)
    g_star = generate_goal_soi(g_dag, sc.lambda_d)

    rng = np.random.default_rng(seed * 101 + 7)
    anchors = [g0, g_dag.soi, g_star]
    for _ in range(50):
        cx, cy = rng.uniform(-0.12, 0.12, size=2)
        cz = rng.uniform(0.42, 0.50)
        sx, sy = rng.uniform(0.05, 0.12, size=2)
        sz = rng.uniform(0.02, 0.05)
        obs = Obstacle(
            lo=[cx - sx / 2, cy - sy / 2, cz - sz / 2],
            hi=[cx + sx / 2, cy + sy / 2, cz + sz / 2],
            margin=0.005,
        )
        if all(collision_check(a, [obs]) for a in anchors):
            return sc, g0, g_dag.soi, g_star, [obs]
    raise RuntimeError("could not place an obstacle clear of the anchors")


def test_criterion_3_planner_reliability():
    lines = []
    all_ok = True
    worst_time = 0.0
    for preset in sorted(OBJECT_PRESETS):
        successes = 0
        for scene in range(10):
            sc, g0, g_dag, g_star, obstacles = _planner_scene(preset, scene)
            t0 = time.perf_counter()
            try:
                path = plan_full(g0, g_dag, g_star, obstacles, sc.planner)
            except PlanningFailed:
                continue
            dt = time.perf_counter() - t0
            worst_time = max(worst_time, dt)
            assert dt < 60.0
            # each segment regularizes against its own reference perimeter
            P = [polyline_perimeter(g.points) for g in (g0, g_dag, g_star)]
            segments = [
                (path.pre_bagging, 0.5 * (P[0] + P[1])),
                (path.bagging, 0.5 * (P[1] + P[2])),
            ]
            for nodes, R in segments:
                for node in nodes:
                    # perimeter band, on-ellipse residual, collision-free
                    band = abs(node_perimeter(node) / R - 1.0)
                    assert band <= sc.planner.lambda4 + 1e-9
                    e = node.ellipse
                    d = node.soi.points - e.c
                    val = (d @ e.u / e.rho_u) ** 2 + (d @ e.v / e.rho_v) ** 2
                    res = np.abs(np.sqrt(val) - 1.0).max() * max(e.rho_u, e.rho_v)
                    assert res <= 1e-6
                    assert collision_check(node.soi, obstacles)
            successes += 1
        lines.append(f"{preset} {successes}/10")
        all_ok = all_ok and successes >= 9
    _report(
        "criterion 3 (planner reliability)",
        all_ok,
        f"{', '.join(lines)} (>= 9/10 each), node invariants hold, "
        f"worst query {worst_time:.2f} s (< 60)",
    )


# ---------------------------------------------------------------------------
# criterion 4: Kronecker prediction exactness


def test_criterion_4_prediction_exactness():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = 3 * int(rng.integers(2, 11))
        T = int(rng.integers(1, 11))
        J = rng.normal(size=(n, 12))
        x = rng.normal(size=n)
        u_bar = rng.normal(size=12 * T)
        A, B = build_prediction(J, T)
        stacked = A @ x + B @ u_bar
        xk = x.copy()
        rollout = []
        for k in range(T):
            xk = xk + J @ u_bar[12 * k : 12 * (k + 1)]
            rollout.append(xk.copy())
        worst = max(worst, float(np.abs(stacked - np.concatenate(rollout)).max()))
    ok = worst <= 1e-12
    _report(
        "criterion 4 (prediction exactness)",
        ok,
        f"100 random (J, u_bar, T<=10), max |stacked - rollout| {worst:.2e} (<= 1e-12)",
    )


# ---------------------------------------------------------------------------
# criterion 5: Broyden secant identity and convergence


def test_criterion_5_broyden():
    rng = np.random.default_rng(3)
    worst_secant = 0.0
    for _ in range(200):
        J = rng.normal(size=(24, 12))
        u = rng.normal(size=12)
        s = rng.normal(size=24)
        J1 = broyden_update(J, s, u, rate=1.0)
        worst_secant = max(worst_secant, float(np.abs(J1 @ u - s).max()))

    J_star = rng.normal(size=(24, 12))
    J = np.zeros((24, 12))
    for _ in range(200):
        u = rng.normal(size=12)
        J = broyden_update(J, J_star @ u, u, rate=0.5)
    errs = [
        np.linalg.norm((J - J_star) @ u) / np.linalg.norm(u)
        for u in rng.normal(size=(100, 12))
    ]
    mean_err = float(np.mean(errs))
    ok = worst_secant < 1e-10 and mean_err < 0.05
    _report(
        "criterion 5 (Broyden secant and convergence)",
        ok,
        f"worst secant residual {worst_secant:.2e} (< 1e-10), directional error "
        f"after 200 steps {mean_err * 100:.2f}% (< 5%)",
    )


# ---------------------------------------------------------------------------
# criterion 6: closed-loop tracking, perception off and on


def test_criterion_6_closed_loop_tracking():
    sc = scenario_from_dict({"name": "cb", "object": "coffee_box", "seed": 3})
    t0 = time.perf_counter()
    report = run_pipeline(sc)
    dt_off = time.perf_counter() - t0
    off_ok = (
        report.success
        and report.final_mean_error < 0.005
        and report.perimeter_drift < 0.02
        and dt_off < 60.0
    )

    sc_p = scenario_from_dict(
        {
            "name": "cb-perception",
            "object": "coffee_box",
            "seed": 3,
            "perception_in_loop": True,
            "bag": {"cloud_noise_sigma": 0.003},
            "success_tol": 0.010,
        }
    )
    t0 = time.perf_counter()
    report_p = run_pipeline(sc_p)
    dt_on = time.perf_counter() - t0
    on_ok = report_p.success and report_p.final_mean_error < 0.010 and dt_on < 60.0

    ok = off_ok and on_ok
    _report(
        "criterion 6 (closed-loop tracking)",
        ok,
        f"perception off: mean error {report.final_mean_error * 1000:.2f} mm (< 5), "
        f"drift {report.perimeter_drift * 100:.2f}% (< 2), {dt_off:.1f} s; "
        f"perception on (sigma 3 mm): mean error "
        f"{report_p.final_mean_error * 1000:.2f} mm (< 10), {dt_on:.1f} s (< 60)",
    )


# ---------------------------------------------------------------------------
# criterion 7: perimeter approximation accuracy


def test_criterion_7_perimeter_approximation():
    worst = 0.0
    for aspect in np.linspace(1.0, 10.0, 181):
        approx = ellipse_perimeter(aspect, 1.0)
        exact = ellipse_perimeter_quadrature(aspect, 1.0)
        worst = max(worst, abs(approx / exact - 1.0))
    ok = worst < 1e-4
    _report(
        "criterion 7 (perimeter approximation)",
        ok,
        f"max relative error {worst:.2e} over aspect ratios [1, 10] (< 1e-4)",
    )


# ---------------------------------------------------------------------------
# criterion 8: byte-identical determinism


def test_criterion_8_determinism(tmp_path):
    sc = scenario_from_dict({"name": "det", "object": "coffee_box", "seed": 11})
    run_pipeline(sc, out_dir=tmp_path / "first")
    run_pipeline(sc, out_dir=tmp_path / "second")
    same_log = (tmp_path / "first/run.log.jsonl").read_bytes() == (
        tmp_path / "second/run.log.jsonl"
    ).read_bytes()
    same_report = (tmp_path / "first/report.json").read_bytes() == (
        tmp_path / "second/report.json"
    ).read_bytes()
    ok = same_log and same_report
    _report(
        "criterion 8 (determinism)",
        ok,
        f"identical seed twice: log bytes equal {same_log}, "
        f"report bytes equal {same_report}",
    )
