"""Two-vehicle roundabout negotiation: game-theoretic receding-horizon
control with online driver-type estimation and distilled neural policies."""

from .estimator import (
    Belief,
    DriverType,
    TypeObservation,
    classify_type,
    is_critical,
    quantize_action,
    select_model,
    update_belief,
)
from .geometry import (
    DEFAULT_ZONES,
    OrientedRect,
    RoundaboutLayout,
    RoutePair,
    ZoneSpec,
    c_zone,
    default_layout,
    layout_from_dict,
    layout_to_dict,
    make_layout,
    rects_overlap,
    s_zone,
)
from .kinematics import Action, SimParams, VehicleState, action_catalog, step, wrap_angle
from .policy import PlanCache, PlanResult, best_response, level0_plan, type1_plan, type2_plan
from .reward import (
    DEFAULT_WEIGHTS,
    FeatureVector,
    TrafficState,
    cumulative_reward,
    features,
    stage_reward,
)

__version__ = "0.1.0"
