"""SOI-based dual-arm bagging pipeline.

Rim extraction from noisy clouds, constrained bagging-ellipse generation,
constrained bidirectional RRT planning over elliptical rim states, MPC
shape servoing with online Broyden Jacobian estimation, and a surrogate
bag plant that closes the loop at desk scale.
"""

from .errors import SoibagError
from .extraction import GmmConfig, extract_soi, fit_gmm, order_rim
from .generation import (
    BaggingConstraintParams,
    BaggingSOI,
    compute_bagging_ellipse,
    generate_goal_soi,
    implicit_ellipse_value,
    make_bagging_soi,
)
from .geometry import (
    BottomFrame,
    Ellipse2D,
    Ellipse3D,
    OrderedSOI,
    build_bottom_frame,
    chamfer_distance,
    ellipse_perimeter,
    farthest_point_sampling,
    from_frame,
    pca_principal_axis,
    polyline_perimeter,
    sample_ellipse3d,
    to_frame,
)
from .harness import Scenario, load_scenario, run_pipeline
from .planning import (
    BaggingPath,
    Obstacle,
    PathNode,
    PlannerConfig,
    collision_check,
    plan_full,
    plan_segment,
    regularize,
)
from .servo import (
    MpcConfig,
    broyden_update,
    build_prediction,
    mpc_step,
    run_controller,
)
from .simulator import BagModelConfig, BagSim, GripperState, bag_forward, emit_cloud

__version__ = "0.1.0"
