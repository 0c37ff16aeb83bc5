"""Lane-graph world: maps, kinematics, scenarios and episode outcomes."""
from .commands import (
    ChangeLaneLeft,
    ChangeLaneRight,
    CommandError,
    Go,
    HighLevelCommand,
    RejectedCommand,
    SlowDown,
    SpeedUp,
    Stop,
    parse_command,
)
from .kinematics import (
    DECISION_INTERVAL,
    DT,
    K_STEPS,
    CollisionEvent,
    apply_command,
    control_for,
    detect_collisions,
    expand_command,
    step_simulation,
)
from .mapmodel import Lane, MapModel, TrafficLight
from .outcome import EpisodeHistory, EpisodeOutcome, evaluate_episode
from .scenario import ScenarioError, ScenarioSpec, load_scenario, load_spec, scenario_names
from .state import ControlInput, VehicleState, WorldState

__all__ = [
    "ChangeLaneLeft", "ChangeLaneRight", "CommandError", "Go", "HighLevelCommand", "RejectedCommand",
    "SlowDown", "SpeedUp", "Stop", "parse_command", "DECISION_INTERVAL", "DT", "K_STEPS",
    "CollisionEvent", "apply_command", "control_for", "detect_collisions", "expand_command",
    "step_simulation", "Lane", "MapModel", "TrafficLight", "EpisodeHistory", "EpisodeOutcome",
    "evaluate_episode", "ScenarioError", "ScenarioSpec", "load_scenario", "load_spec",
    "scenario_names", "ControlInput", "VehicleState", "WorldState",
]
