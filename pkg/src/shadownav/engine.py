"""Episode orchestration: scene construction, the observe-decide-actuate loop,
outcome classification, safety auditing and trajectory recording."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum

from .controller import (ControlDecision, ControllerPhase, NavigationController,
                         Thresholds)
from .features import TargetSpec, observe
from .geometry import (EyeModel, Vec3, cast_shadow, in_limbus_disc, project,
                       retina_clearance)
from .kinematics import (LightProbeState, NeedleState, RangeViolation, StepCommand,
                         StepKind, StepSizes, apply_step, forward_tip)


class SamplingExhausted(Exception):
    """Rejection sampling failed to produce a valid target."""


class EmptyInput(Exception):
    """Aggregation needs at least one episode record."""


class Outcome(Enum):
    SUCCESS = "success"
    STUCK = "stuck"
    DEGENERATE = "degenerate"
    SAFETY_ABORT = "safety_abort"


@dataclass(frozen=True, slots=True)
class EyeScene:
    """Full ground-truth state of one episode."""

    eye: EyeModel
    needle: NeedleState
    light: LightProbeState
    target: TargetSpec
    rng_seed: int = 0

    def validate(self):
        light_tip = forward_tip(self.light)
        if light_tip.z <= self.target.position.z:
            raise ValueError("light tip must be above the target (shadowing prior)")
        if retina_clearance(forward_tip(self.needle), self.eye) <= 0.0:
            raise ValueError("needle tip starts outside the eye sphere")
        return self


@dataclass(frozen=True, slots=True)
class TargetSampler:
    """Per-axis normal target distribution with rejection rules.

    ``spread`` values are variances when spread_is_variance is set (the
    default), standard deviations otherwise.
    """

    floating_fraction: float = 0.4678
    floating_mean: tuple[float, float, float] = (0.60, -1.00, -9.02)
    floating_spread: tuple[float, float, float] = (3.00, 4.71, 1.98)
    retinal_mean: tuple[float, float] = (-0.02, 0.06)
    retinal_spread: tuple[float, float] = (5.03, 7.08)
    spread_is_variance: bool = True

    def __post_init__(self):
        if not 0.0 <= self.floating_fraction <= 1.0:
            raise ValueError("floating_fraction must lie in [0, 1]")

    def sigmas(self, spread: tuple[float, ...]) -> tuple[float, ...]:
        if self.spread_is_variance:
            return tuple(math.sqrt(v) for v in spread)
        return tuple(spread)


# Floating targets must sit clearly under the light tip for the shadow prior.
LIGHT_CLEARANCE_MM = 0.5
MAX_SAMPLE_ATTEMPTS = 1000


def sample_target(sampler: TargetSampler, rng: random.Random, eye: EyeModel,
                  light_tip: Vec3) -> TargetSpec:
    """Draw one target; resample until all scene rules hold.

    A sample must fall inside the limbus-visible cylinder, floating targets
    strictly above the retina and below the light, and its cast shadow must
    land inside the visible aperture (otherwise the method has no target
    shadow to work with).
    """
    limbus_sq = eye.limbus_radius_mm ** 2
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        if rng.random() < sampler.floating_fraction:
            sx, sy, sz = sampler.sigmas(sampler.floating_spread)
            mx, my, mz = sampler.floating_mean
            pos = Vec3(rng.gauss(mx, sx), rng.gauss(my, sy), rng.gauss(mz, sz))
            if pos.x ** 2 + pos.y ** 2 >= limbus_sq:
                continue
            if pos.norm() >= eye.radius_mm:
                continue
            if pos.z >= light_tip.z - LIGHT_CLEARANCE_MM:
                continue
            kind = "floating"
        else:
            sx, sy = sampler.sigmas(sampler.retinal_spread)
            mx, my = sampler.retinal_mean
            x, y = rng.gauss(mx, sx), rng.gauss(my, sy)
            if x * x + y * y >= limbus_sq:
                continue
            pos = Vec3(x, y, -math.sqrt(eye.radius_mm ** 2 - x * x - y * y))
            kind = "retinal"
        shadow = cast_shadow(light_tip, pos, eye)
        if not in_limbus_disc(project(shadow, eye), eye):
            continue
        return TargetSpec(kind=kind, position=pos)
    raise SamplingExhausted(f"no valid target in {MAX_SAMPLE_ATTEMPTS} attempts")


@dataclass(frozen=True, slots=True)
class EpisodeLimits:
    max_steps: int = 20000
    stuck_window_steps: int = 500
    stuck_min_progress_px: float = 0.5

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True, slots=True)
class LightAction:
    """Scripted light-probe motion; amount is degrees for rotations, mm for axial."""

    kind: str  # h_cw | h_ccw | v_up | v_down | r_in | r_out
    amount: float

    def apply(self, light: LightProbeState) -> LightProbeState:
        k, a = self.kind, self.amount
        if k == "h_cw":
            return replace(light, theta_h=light.theta_h - a)
        if k == "h_ccw":
            return replace(light, theta_h=light.theta_h + a)
        if k == "v_up":
            return replace(light, theta_v=light.theta_v + a)
        if k == "v_down":
            return replace(light, theta_v=light.theta_v - a)
        if k == "r_in":
            return replace(light, r=light.r + a)
        if k == "r_out":
            return replace(light, r=light.r - a)
        raise ValueError(f"unknown light action kind {k!r}")


@dataclass(frozen=True, slots=True)
class ScriptEntry:
    """(trigger, action) pair; trigger is "on_degenerate" or an int step index.

    An on_degenerate entry fires on every degenerate tick, an at-step entry
    exactly once.
    """

    trigger: str | int
    action: LightAction


@dataclass(slots=True)
class StepLog:
    step: int
    phase: str
    command: str | None
    rationale: str
    r: float
    theta_h: float
    theta_v: float
    tip: tuple[float, float, float]
    tip_shadow_z: float
    clearance: float
    d_n_t: float
    d_ns_ts: float | None

    def to_dict(self) -> dict:
        return {
            "type": "step", "step": self.step, "phase": self.phase,
            "command": self.command, "rationale": self.rationale,
            "r_mm": self.r, "theta_h_deg": self.theta_h, "theta_v_deg": self.theta_v,
            "tip_mm": list(self.tip), "tip_shadow_z_mm": self.tip_shadow_z,
            "clearance_mm": self.clearance, "d_n_t_px": self.d_n_t,
            "d_ns_ts_px": self.d_ns_ts,
        }


@dataclass(slots=True)
class EpisodeRecord:
    """Per-step trajectory log plus terminal metrics."""

    target: TargetSpec
    outcome: Outcome
    step_count: int
    depth_error_mm: float
    xy_error_mm: float
    shadow_xy_error_px: float
    final_clearance_mm: float
    min_clearance_mm: float
    safety_retreats: int
    phase_first_step: dict[str, int]
    final_rationale: str
    rng_seed: int
    steps: list[StepLog] = field(default_factory=list)

    def terminal_dict(self) -> dict:
        return {
            "type": "terminal",
            "outcome": self.outcome.value,
            "target_kind": self.target.kind,
            "target_mm": [self.target.position.x, self.target.position.y,
                          self.target.position.z],
            "steps": self.step_count,
            "depth_error_mm": self.depth_error_mm,
            "xy_error_mm": self.xy_error_mm,
            "shadow_xy_error_px": self.shadow_xy_error_px,
            "retina_clearance_mm": self.final_clearance_mm,
            "min_clearance_mm": self.min_clearance_mm,
            "safety_retreats": self.safety_retreats,
            "phase_first_step": self.phase_first_step,
            "final_rationale": self.final_rationale,
            "rng_seed": self.rng_seed,
        }


def run_episode(scene: EyeScene, thresholds: Thresholds, steps: StepSizes,
                limits: EpisodeLimits, *, noise_sigma_px: float = 0.0,
                record_steps: bool = True, on_step=None) -> EpisodeRecord:
    """Run one observe-decide-actuate episode to its terminal outcome.

    All failures are outcomes, never exceptions: Stuck when the combined
    tip+shadow pixel distance stops improving (or the budget runs out),
    Degenerate when the controller asks for a light adjustment and no script
    provides one, SafetyAbort when a step would penetrate the retina (the
    step is rolled back first, so logged poses never penetrate).
    """
    return run_episode_with_script(scene, thresholds, steps, limits, (),
                                   noise_sigma_px=noise_sigma_px,
                                   record_steps=record_steps, on_step=on_step)


def run_episode_with_script(scene: EyeScene, thresholds: Thresholds,
                            steps: StepSizes, limits: EpisodeLimits,
                            script, *, noise_sigma_px: float = 0.0,
                            record_steps: bool = True, on_step=None) -> EpisodeRecord:
    """run_episode plus scripted light motions on their triggers."""
    eye = scene.eye
    needle = scene.needle
    light = scene.light
    ctrl = NavigationController(thresholds, steps, eye)
    rng = random.Random(scene.rng_seed) if noise_sigma_px > 0.0 else None

    at_step: dict[int, list[LightAction]] = {}
    on_degenerate: list[LightAction] = []
    for entry in script:
        if entry.trigger == "on_degenerate":
            on_degenerate.append(entry.action)
        else:
            at_step.setdefault(int(entry.trigger), []).append(entry.action)

    rows: list[StepLog] = []
    prefix_min: list[float] = []
    phase_first: dict[str, int] = {}
    safety_retreats = 0
    min_clear = retina_clearance(forward_tip(needle), eye)
    outcome = None
    final_rationale = ""
    k = 0

    for k in range(limits.max_steps):
        for action in at_step.get(k, ()):
            light = action.apply(light)
        frame_scene = replace(scene, needle=needle, light=light)
        f = observe(frame_scene, noise_sigma_px=noise_sigma_px, rng=rng)
        decision = ctrl.tick(f)
        final_rationale = decision.rationale
        phase_first.setdefault(decision.phase.value, k)

        light_tip = forward_tip(light)
        tip = forward_tip(needle)
        clearance = retina_clearance(tip, eye)
        if record_steps or on_step is not None:
            d_n_t = f.p_n.distance_to(f.p_t)
            d_ns_ts = f.p_ns.distance_to(f.p_ts) if f.p_ns is not None else None
            row = StepLog(step=k, phase=decision.phase.value,
                          command=decision.command.label() if decision.command else None,
                          rationale=decision.rationale, r=needle.r,
                          theta_h=needle.theta_h, theta_v=needle.theta_v,
                          tip=(tip.x, tip.y, tip.z),
                          tip_shadow_z=cast_shadow(light_tip, tip, eye).z,
                          clearance=clearance, d_n_t=d_n_t, d_ns_ts=d_ns_ts)
            if record_steps:
                rows.append(row)
            if on_step is not None:
                on_step(k, frame_scene, f, decision)

        # progress measure for the stuck detector
        s = f.p_n.distance_to(f.p_t)
        if f.p_ns is not None:
            s += f.p_ns.distance_to(f.p_ts)
        prefix_min.append(min(prefix_min[-1], s) if prefix_min else s)

        if decision.phase is ControllerPhase.DONE:
            outcome = Outcome.SUCCESS
            break
        if decision.phase is ControllerPhase.DEGENERATE:
            if on_degenerate:
                for action in on_degenerate:
                    light = action.apply(light)
                continue
            outcome = Outcome.DEGENERATE
            break

        try:
            moved = apply_step(needle, decision.command, steps, eye=eye, target_px=f.p_t)
        except RangeViolation:
            # a compound retreat pinned at a range limit degrades to its axial
            # part; anything else holds and is left to the stuck detector
            moved = needle
            if decision.command.kind is StepKind.R_OUT_V_UP:
                try:
                    moved = apply_step(needle, StepCommand(StepKind.R_OUT), steps)
                except RangeViolation:
                    pass
        new_clear = retina_clearance(forward_tip(moved), eye)
        if new_clear < 0.0:
            outcome = Outcome.SAFETY_ABORT  # roll the step back and stop
            break
        needle = moved
        min_clear = min(min_clear, new_clear)
        if decision.command is not None and decision.command.kind is StepKind.R_OUT_V_UP:
            safety_retreats += 1

        w = limits.stuck_window_steps
        if k >= w and prefix_min[k - w] - prefix_min[k] <= limits.stuck_min_progress_px:
            outcome = Outcome.STUCK
            break

    if outcome is None:
        outcome = Outcome.STUCK  # step budget exhausted

    tip = forward_tip(needle)
    target = scene.target.position
    light_tip = forward_tip(light)
    shadow_err = project(cast_shadow(light_tip, tip, eye), eye).distance_to(
        project(cast_shadow(light_tip, target, eye), eye))
    return EpisodeRecord(
        target=scene.target, outcome=outcome, step_count=k + 1,
        depth_error_mm=tip.z - target.z,
        xy_error_mm=math.hypot(tip.x - target.x, tip.y - target.y),
        shadow_xy_error_px=shadow_err,
        final_clearance_mm=retina_clearance(tip, eye),
        min_clearance_mm=min_clear,
        safety_retreats=safety_retreats,
        phase_first_step=phase_first,
        final_rationale=final_rationale,
        rng_seed=scene.rng_seed,
        steps=rows,
    )


@dataclass(slots=True)
class KindStats:
    n: int = 0
    success: int = 0
    stuck: int = 0
    degenerate: int = 0
    safety_abort: int = 0
    mean_depth_error_mm: float | None = None
    mean_abs_depth_error_mm: float | None = None
    mean_clearance_mm: float | None = None
    xy_within_1mm_fraction: float | None = None
    xy_error_hist: dict | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n, "success": self.success, "stuck": self.stuck,
            "degenerate": self.degenerate, "safety_abort": self.safety_abort,
            "mean_depth_error_vs_target_mm": self.mean_depth_error_mm,
            "mean_abs_depth_error_vs_target_mm": self.mean_abs_depth_error_mm,
            "mean_clearance_vs_retina_mm": self.mean_clearance_mm,
            "xy_within_1mm_fraction": self.xy_within_1mm_fraction,
            "xy_error_hist_mm": self.xy_error_hist,
        }


@dataclass(slots=True)
class SummaryStats:
    episodes: int
    success: int
    stuck: int
    degenerate: int
    safety_abort: int
    penetration_count: int
    floating: KindStats
    retinal: KindStats

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes, "success": self.success,
            "stuck": self.stuck, "degenerate": self.degenerate,
            "safety_abort": self.safety_abort,
            "penetration_count": self.penetration_count,
            "floating": self.floating.to_dict(),
            "retinal": self.retinal.to_dict(),
        }


_XY_HIST_EDGES = [0.1 * i for i in range(21)]  # 0 .. 2 mm in 0.1 mm bins


def _kind_stats(records: list[EpisodeRecord]) -> KindStats:
    ks = KindStats(n=len(records))
    for r in records:
        if r.outcome is Outcome.SUCCESS:
            ks.success += 1
        elif r.outcome is Outcome.STUCK:
            ks.stuck += 1
        elif r.outcome is Outcome.DEGENERATE:
            ks.degenerate += 1
        else:
            ks.safety_abort += 1
    good = [r for r in records if r.outcome is Outcome.SUCCESS]
    if good:
        depth = [r.depth_error_mm for r in good]
        ks.mean_depth_error_mm = sum(depth) / len(depth)
        ks.mean_abs_depth_error_mm = sum(abs(e) for e in depth) / len(depth)
        ks.mean_clearance_mm = sum(r.final_clearance_mm for r in good) / len(good)
        xy = [r.xy_error_mm for r in good]
        ks.xy_within_1mm_fraction = sum(1 for e in xy if e <= 1.0) / len(xy)
        counts = [0] * (len(_XY_HIST_EDGES) - 1)
        overflow = 0
        for e in xy:
            idx = int(e / 0.1)
            if idx < len(counts):
                counts[idx] += 1
            else:
                overflow += 1
        ks.xy_error_hist = {"bin_edges_mm": _XY_HIST_EDGES, "counts": counts,
                            "overflow": overflow}
    return ks


def aggregate(records: list[EpisodeRecord]) -> SummaryStats:
    """Deterministic reduction of a batch into per-kind statistics."""
    if not records:
        raise EmptyInput("aggregate needs at least one episode record")
    floating = _kind_stats([r for r in records if r.target.kind == "floating"])
    retinal = _kind_stats([r for r in records if r.target.kind == "retinal"])
    return SummaryStats(
        episodes=len(records),
        success=floating.success + retinal.success,
        stuck=floating.stuck + retinal.stuck,
        degenerate=floating.degenerate + retinal.degenerate,
        safety_abort=floating.safety_abort + retinal.safety_abort,
        penetration_count=sum(1 for r in records if r.min_clearance_mm < 0.0),
        floating=floating,
        retinal=retinal,
    )
