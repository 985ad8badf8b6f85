from .env import (
    ACTION_NAMES,
    FORWARD,
    N_ACTIONS,
    STOP,
    TURN_LEFT,
    TURN_RIGHT,
    EnvConfig,
    EpisodeError,
    EpisodeState,
    Observation,
    RewardTerms,
    RobotState,
    StepResult,
    observe,
    raycast_depth,
    reset,
    step,
    to_robot_frame,
    wrap_angle,
)
from .metrics import MetricsError, MetricsReport, RobotEpisode, compute_metrics
from .pedestrians import HumanState, social_force_step
from .scene import Scene, SceneConfig, SceneGenerationError, generate_scene, geodesic_distance
from .traces import EpisodeLog, episodes_from_trace
