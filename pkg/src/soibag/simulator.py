"""Surrogate bag plant closing the control loop.

Two rim anchors rigidly follow free-flying gripper frames; the rest of the
rim is a perimeter-preserving elastic ellipse blend between them with a
mild quadratic nonlinearity, so the map from gripper increments to rim
motion is smooth, full column rank, and translation equivariant.  A cloud
emitter with Gaussian noise and uniform outliers stands in for the camera.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .errors import AnchorsCoincident
from .extraction import GmmConfig, extract_soi
from .geometry import OrderedSOI, as_points, ellipse_perimeter, polyline_perimeter


def _axis_angle_matrix(w):
    angle = np.linalg.norm(w)
    if angle < 1e-15:
        return np.eye(3)
    axis = w / angle
    K = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


@dataclass(frozen=True)
class GripperState:
    """Left and right handle frames: positions and rotation matrices."""

    left_pos: np.ndarray
    left_rot: np.ndarray
    right_pos: np.ndarray
    right_rot: np.ndarray

    def __post_init__(self):
        for name in ("left_pos", "right_pos"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=float).reshape(3)
            )
        for name in ("left_rot", "right_rot"):
            R = np.asarray(getattr(self, name), dtype=float)
            if not np.allclose(R.T @ R, np.eye(3), atol=1e-8):
                raise ValueError(f"{name} is not orthonormal")
            object.__setattr__(self, name, R)

    def advance(self, u):
        """Integrate a 12-vector of pose increments (translation add,
        orientation composed through the axis-angle exponential)."""
        u = np.asarray(u, dtype=float).reshape(12)
        return GripperState(
            left_pos=self.left_pos + u[0:3],
            left_rot=_axis_angle_matrix(u[3:6]) @ self.left_rot,
            right_pos=self.right_pos + u[6:9],
            right_rot=_axis_angle_matrix(u[9:12]) @ self.right_rot,
        )


@dataclass(frozen=True)
class BagModelConfig:
    rest_perimeter: float = 0.68
    rest_aspect: float = 0.8  # minor/major of the rest rim ellipse
    rest_center: tuple = (0.0, 0.0, 0.6)
    n_x: int = 32
    theta_left: float = np.pi  # handle anchor angles on the rest rim
    theta_right: float = 0.0
    stiffness: float = 0.6
    nonlinearity_gain: float = 0.5
    cloud_density: int = 50
    cloud_noise_sigma: float = 0.003
    outlier_fraction: float = 0.1
    perimeter_tolerance: float = 0.05

    def __post_init__(self):
        if self.rest_perimeter <= 0:
            raise ValueError("rest_perimeter must be positive")
        if not (0.0 < self.stiffness <= 1.0):
            raise ValueError("stiffness must be in (0, 1]")
        if abs(self.theta_left - self.theta_right) < 1e-9:
            raise AnchorsCoincident("handle anchors must be distinct")
        if self.cloud_density < 1:
            raise ValueError("cloud_density must be >= 1")
        if not (0.0 <= self.outlier_fraction < 1.0):
            raise ValueError("outlier_fraction must be in [0, 1)")

    @property
    def rest_axes(self):
        a = self.rest_perimeter / ellipse_perimeter(1.0, self.rest_aspect)
        return a, a * self.rest_aspect

    def rest_rim(self):
        a, b = self.rest_axes
        theta = self._thetas()
        c = np.asarray(self.rest_center, dtype=float)
        return c + np.column_stack(
            [a * np.cos(theta), b * np.sin(theta), np.zeros(self.n_x)]
        )

    def _thetas(self):
        return np.linspace(0.0, 2.0 * np.pi, self.n_x, endpoint=False)

    def rest_grippers(self):
        a, b = self.rest_axes
        c = np.asarray(self.rest_center, dtype=float)
        left = c + np.array(
            [a * np.cos(self.theta_left), b * np.sin(self.theta_left), 0.0]
        )
        right = c + np.array(
            [a * np.cos(self.theta_right), b * np.sin(self.theta_right), 0.0]
        )
        return GripperState(left, np.eye(3), right, np.eye(3))


def _anchor_weights(thetas, anchor, width):
    """Smooth bump, 1 at the anchor angle, 0 beyond the half-width."""
    delta = np.angle(np.exp(1j * (thetas - anchor)))
    w = np.zeros_like(thetas)
    inside = np.abs(delta) < width
    w[inside] = np.cos(0.5 * np.pi * delta[inside] / width) ** 2
    return w


def bag_forward(gripper, cfg):
    """Map gripper poses to the ground-truth rim.

    Anchor arcs follow the handle frames rigidly (weight 1 at the anchor,
    smooth falloff), the free rim follows a chord-parameterized ellipse of
    the rest perimeter, plus a quadratic out-of-plane nonlinearity keyed to
    relative anchor stretch.  The output perimeter is clamped into the
    configured band around the rest perimeter.
    """
    rest = cfg.rest_rim()
    rest_g = cfg.rest_grippers()
    thetas = cfg._thetas()
    R0 = cfg.rest_perimeter
    a0, _ = cfg.rest_axes

    def rigid(pts, rot, pos, rest_pos):
        return (pts - rest_pos) @ rot.T + pos

    left_pts = rigid(rest, gripper.left_rot, gripper.left_pos, rest_g.left_pos)
    right_pts = rigid(rest, gripper.right_rot, gripper.right_pos, rest_g.right_pos)

    q_left = rigid(rest_g.left_pos[None], gripper.left_rot, gripper.left_pos, rest_g.left_pos)[0]
    q_right = rigid(rest_g.right_pos[None], gripper.right_rot, gripper.right_pos, rest_g.right_pos)[0]
    chord = q_right - q_left
    chord_len = float(np.linalg.norm(chord))
    if chord_len < 1e-9:
        raise AnchorsCoincident("gripper anchors coincide")

    mid = 0.5 * (q_left + q_right)
    u_hat = chord / chord_len

    z_avg = (gripper.left_rot + gripper.right_rot) @ np.array([0.0, 0.0, 1.0])
    n = z_avg - (z_avg @ u_hat) * u_hat
    if np.linalg.norm(n) < 1e-9:
        n = np.array([0.0, 0.0, 1.0]) - u_hat[2] * u_hat
    n = n / np.linalg.norm(n)
    v_hat = np.cross(n, u_hat)

    rho_u = 0.5 * chord_len
    rho_v = _solve_minor_axis(rho_u, R0)
    elastic = (
        mid
        + rho_u * np.cos(thetas)[:, None] * u_hat
        + rho_v * np.sin(thetas)[:, None] * v_hat
    )

    stretch = chord_len - 2.0 * a0
    wiggle = cfg.nonlinearity_gain * stretch ** 2
    elastic = elastic + wiggle * np.sin(thetas)[:, None] * n

    width = 0.45 * np.pi * cfg.stiffness
    w_l = _anchor_weights(thetas, cfg.theta_left, width)
    w_r = _anchor_weights(thetas, cfg.theta_right, width)
    w_free = np.clip(1.0 - w_l - w_r, 0.0, 1.0)
    pts = (
        w_l[:, None] * left_pts
        + w_r[:, None] * right_pts
        + w_free[:, None] * elastic
    )

    perim = polyline_perimeter(pts)
    band = cfg.perimeter_tolerance
    target = min(max(perim, (1.0 - band) * R0), (1.0 + band) * R0)
    if abs(target - perim) > 1e-12:
        pts = mid + (pts - mid) * (target / perim)
    return OrderedSOI(pts)


def _solve_minor_axis(rho_u, perimeter):
    """Minor axis so the analytic ellipse perimeter matches, clamped when
    the chord alone exceeds the available perimeter."""
    if 4.0 * rho_u >= perimeter:
        return 1e-4
    lo, hi = 1e-6, perimeter / np.pi

    def f(rv):
        return ellipse_perimeter(max(rho_u, rv), min(rho_u, rv)) - perimeter

    if f(hi) < 0:
        hi = perimeter  # generous upper bracket
    return float(brentq(f, lo, hi, xtol=1e-12))


def emit_cloud(rim, cfg, rng):
    """Synthetic camera cloud: density noisy samples per rim point plus a
    fixed count of uniform outliers in the inflated bounding box."""
    pts = rim.points if isinstance(rim, OrderedSOI) else as_points(rim)
    base = np.repeat(pts, cfg.cloud_density, axis=0)
    base = base + rng.normal(scale=cfg.cloud_noise_sigma, size=base.shape)
    n_out = int(np.ceil(cfg.outlier_fraction * len(base)))
    if n_out > 0:
        lo = pts.min(axis=0) - 0.05
        hi = pts.max(axis=0) + 0.05
        outliers = rng.uniform(lo, hi, size=(n_out, 3))
        return np.vstack([base, outliers])
    return base


class BagSim:
    """Stateful plant implementing the controller's apply/reset contract.

    With perception enabled, apply() routes the ground-truth rim through
    the cloud emitter and the GMM extractor (warm-started on the previous
    estimate); otherwise the rim is returned directly.
    """

    def __init__(self, cfg=None, perception=False, gmm_cfg=None, seed=0):
        self.cfg = cfg if cfg is not None else BagModelConfig()
        self.perception = perception
        self.gmm_cfg = gmm_cfg if gmm_cfg is not None else GmmConfig(n_x=self.cfg.n_x)
        self.seed = seed
        self.reset()

    def reset(self):
        self.gripper = self.cfg.rest_grippers()
        self.rng = np.random.default_rng(self.seed)
        self.rim_truth = bag_forward(self.gripper, self.cfg)
        self._prev_estimate = None
        return self._observe()

    def _observe(self):
        if not self.perception:
            return self.rim_truth
        cloud = emit_cloud(self.rim_truth, self.cfg, self.rng)
        soi = extract_soi(cloud, self.gmm_cfg, prev=self._prev_estimate)
        self._prev_estimate = soi
        return soi

    def apply(self, u):
        self.gripper = self.gripper.advance(u)
        self.rim_truth = bag_forward(self.gripper, self.cfg)
        return self._observe()
