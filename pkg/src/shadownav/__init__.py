"""Shadow-guided intraocular needle navigation simulator."""

from .controller import (ControlDecision, ControllerPhase, NavigationController,
                         Thresholds)
from .engine import (EpisodeLimits, EpisodeRecord, EyeScene, LightAction, Outcome,
                     ScriptEntry, SummaryStats, TargetSampler, aggregate,
                     run_episode, run_episode_with_script, sample_target)
from .features import (FeatureDistances, SceneFeatures, TargetSpec, distances,
                       estimate_trocar_projection, expected_shadow_position,
                       observe)
from .geometry import (EyeModel, Line2, Pixel, Vec3, cast_shadow, project,
                       ray_sphere_far_intersection, retina_clearance)
from .kinematics import (LightProbeState, NeedleState, StepCommand, StepKind,
                         StepSizes, apply_step, forward_tip, shaft_sample)

__version__ = "0.1.0"

__all__ = [
    "ControlDecision", "ControllerPhase", "NavigationController", "Thresholds",
    "EpisodeLimits", "EpisodeRecord", "EyeScene", "LightAction", "Outcome",
    "ScriptEntry", "SummaryStats", "TargetSampler", "aggregate", "run_episode",
    "run_episode_with_script", "sample_target",
    "FeatureDistances", "SceneFeatures", "TargetSpec", "distances",
    "estimate_trocar_projection", "expected_shadow_position", "observe",
    "EyeModel", "Line2", "Pixel", "Vec3", "cast_shadow", "project",
    "ray_sphere_far_intersection", "retina_clearance",
    "LightProbeState", "NeedleState", "StepCommand", "StepKind", "StepSizes",
    "apply_step", "forward_tip", "shaft_sample",
    "__version__",
]
