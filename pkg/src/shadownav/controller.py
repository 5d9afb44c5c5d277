"""Three-stage navigation state machine mapping scene features to step commands.

The controller first calibrates the trocar projection with a small azimuth
wiggle, then runs horizontal alignment, shadow enabling and shadow alignment.
Horizontal alignment is re-checked every tick; during shadow alignment the
distance bound is loosened so vertical corrections are not starved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .features import (FeatureDistances, IllConditioned, NearParallel, Pixel,
                       SceneFeatures, angle_between_deg, distances,
                       estimate_trocar_projection, expected_shadow_position)
from .geometry import EyeModel, Line2
from .kinematics import StepCommand, StepKind, StepSizes


@dataclass(frozen=True, slots=True)
class Thresholds:
    """Pixel and angle thresholds of the decision logic."""

    sigma_align_ang_deg: float = 3.0
    sigma_align_dis_px: float = 2.0
    sigma_close_px: float = 100.0
    sigma_app_px: float = 15.0

    def __post_init__(self):
        if min(self.sigma_align_ang_deg, self.sigma_align_dis_px,
               self.sigma_close_px, self.sigma_app_px) <= 0.0:
            raise ValueError("thresholds must be strictly positive")
        if self.sigma_align_dis_px >= self.sigma_close_px:
            raise ValueError("sigma_align_dis must be below sigma_close")


class ControllerPhase(Enum):
    CALIBRATING = "calibrating"
    HORIZONTAL_ALIGN = "horizontal_align"
    SHADOW_ENABLE = "shadow_enable"
    SHADOW_ALIGN = "shadow_align"
    DONE = "done"
    DEGENERATE = "degenerate"


# Stable rationale tags consumed by logs and tests.
R_CALIBRATION = "calibration wiggle"
R_ILL_CONDITIONED = "ill conditioned calibration"
R_ROUGH_ANGLE = "rough angle alignment"
R_FINE_DISTANCE = "fine distance alignment"
R_MAINTENANCE = "alignment maintenance"
R_AXIAL_APPROACH = "axial approach"
R_SHADOW_ENABLE = "shadow enabling rotation"
R_START_IOCT = "start ioct"
R_SAFETY_RETREAT = "safety retreat"
R_AXIAL_INSERTION = "axial insertion"
R_AXIAL_RETRACTION = "axial retraction"
R_VERTICAL_DOWN = "vertical rotation down"
R_VERTICAL_UP = "vertical rotation up"
R_NEEDS_LIGHT = "needs light adjustment"
R_DONE = "done"


@dataclass(frozen=True, slots=True)
class ControlDecision:
    """One tick's outcome: a step command, or a terminal/degenerate verdict."""

    command: StepCommand | None
    phase: ControllerPhase
    rationale: str

    @property
    def is_done(self) -> bool:
        return self.phase is ControllerPhase.DONE

    @property
    def needs_light_adjustment(self) -> bool:
        return self.phase is ControllerPhase.DEGENERATE


# During shadow alignment the distance-based alignment check is loosened so
# azimuthal jitter does not preempt the vertical corrections.
SA_ALIGN_LOOSEN_FACTOR = 2.0
# Half-width of the calibration wiggle in H steps; +/-10 steps of 0.2 deg
# give a 4 deg direction spread, enough to survive segmentation noise.
CALIB_HALF_STEPS = 10

_CW = StepCommand(StepKind.H_CW)
_CCW = StepCommand(StepKind.H_CCW)
_V_COMP_UP = StepCommand(StepKind.V_COMPENSATED, v_sign=1)
_V_COMP_DOWN = StepCommand(StepKind.V_COMPENSATED, v_sign=-1)


class NavigationController:
    """Per-episode controller; holds only the phase and the trocar estimate."""

    def __init__(self, thresholds: Thresholds, steps: StepSizes, eye: EyeModel):
        self.thresholds = thresholds
        self.steps = steps
        self.eye = eye
        self.phase = ControllerPhase.CALIBRATING
        self.p_nrcm: Pixel | None = None
        self._calib_lines: list[Line2] = []
        half = [_CCW] * CALIB_HALF_STEPS
        self._calib_plan = half + [_CW] * (2 * CALIB_HALF_STEPS) + list(half)
        self._calib_idx = 0

    # -- calibration ---------------------------------------------------------

    def calibrate(self, features_sequence: list[SceneFeatures]) -> Pixel:
        """Estimate the trocar projection from needle lines at wiggled azimuths."""
        self.p_nrcm = estimate_trocar_projection([f.l_n for f in features_sequence])
        return self.p_nrcm

    def _tick_calibration(self, f: SceneFeatures) -> ControlDecision | None:
        self._calib_lines.append(f.l_n)
        if self._calib_idx < len(self._calib_plan):
            cmd = self._calib_plan[self._calib_idx]
            self._calib_idx += 1
            return ControlDecision(cmd, ControllerPhase.CALIBRATING, R_CALIBRATION)
        try:
            self.p_nrcm = estimate_trocar_projection(self._calib_lines)
        except IllConditioned:
            self.phase = ControllerPhase.DEGENERATE
            return ControlDecision(None, ControllerPhase.DEGENERATE, R_ILL_CONDITIONED)
        self.phase = ControllerPhase.HORIZONTAL_ALIGN
        return None

    # -- horizontal alignment ------------------------------------------------

    def _rotated_tip(self, f: SceneFeatures, sign: float) -> Pixel:
        """Image position of the tip after one H step (exact under the RCM model).

        A horizontal rotation spins the tip around the vertical trocar axis,
        whose projection is p_nrcm; the image v axis is flipped relative to
        world y, hence the sign juggling.
        """
        c = self.p_nrcm
        wx, wy = f.p_n.u - c.u, -(f.p_n.v - c.v)
        a = math.radians(sign * self.steps.delta_h_deg)
        ca, sa = math.cos(a), math.sin(a)
        rx, ry = ca * wx - sa * wy, sa * wx + ca * wy
        return Pixel(c.u + rx, c.v - ry)

    def _h_step_toward_alignment(self, f: SceneFeatures, use_angle: bool) -> ControlDecision | None:
        """Pick the H direction that reduces the active alignment measure."""
        best = None
        for sign, cmd in ((1.0, _CCW), (-1.0, _CW)):
            tip = self._rotated_tip(f, sign)
            if use_angle:
                m = angle_between_deg(self.p_nrcm, tip, f.p_t)
            else:
                if tip.distance_to(self.p_nrcm) < 1e-9:
                    continue
                m = Line2.through(self.p_nrcm, tip).perpendicular_distance(f.p_t)
            if best is None or m < best[0]:
                best = (m, cmd)
        if best is None:
            return None
        return ControlDecision(best[1], self.phase, "")

    def decide_horizontal(self, f: SceneFeatures, *, loosened: bool = False,
                          maintenance: bool = False) -> ControlDecision | None:
        """H step while misaligned, None once the active criterion is met."""
        if self.p_nrcm is None:
            raise MissingTrocarEstimate()
        d = distances(replace(f, p_nrcm=self.p_nrcm))
        if d.d_n_t > self.thresholds.sigma_close_px:
            if d.angle_alignment <= self.thresholds.sigma_align_ang_deg:
                return None
            dec = self._h_step_toward_alignment(f, use_angle=True)
            tag = R_MAINTENANCE if maintenance else R_ROUGH_ANGLE
        else:
            bound = self.thresholds.sigma_align_dis_px
            if loosened:
                bound *= SA_ALIGN_LOOSEN_FACTOR
            if d.dist_t_to_ln <= bound:
                return None
            dec = self._h_step_toward_alignment(f, use_angle=False)
            tag = R_MAINTENANCE if maintenance else R_FINE_DISTANCE
        if dec is None:
            return None
        return ControlDecision(dec.command, self.phase, tag)

    # -- shadow enabling -----------------------------------------------------

    def decide_shadow_enable(self, f: SceneFeatures) -> ControlDecision | None:
        """Approach to sigma_close, then rotate toward the retina until the
        needle shadow shows up; None once it is visible.

        The needle-shadow proximity retreat outranks the approach here too:
        a long axial approach can reach the retina while the target is still
        far away in the image.
        """
        d_n_t = f.p_n.distance_to(f.p_t)
        if (f.p_ns is not None and d_n_t > self.thresholds.sigma_app_px
                and f.p_n.distance_to(f.p_ns) <= self.thresholds.sigma_app_px):
            return ControlDecision(StepCommand(StepKind.R_OUT_V_UP), self.phase,
                                   R_SAFETY_RETREAT)
        if f.p_ns is None and d_n_t <= self.thresholds.sigma_app_px:
            # on the target's image position with the shadow swallowed by the
            # needle: contact range, back off
            return ControlDecision(StepCommand(StepKind.R_OUT_V_UP), self.phase,
                                   R_SAFETY_RETREAT)
        if d_n_t > self.thresholds.sigma_close_px:
            return ControlDecision(StepCommand(StepKind.R_IN), self.phase, R_AXIAL_APPROACH)
        if f.p_ns is None:
            return ControlDecision(_V_COMP_DOWN, self.phase, R_SHADOW_ENABLE)
        return None

    # -- shadow alignment ----------------------------------------------------

    def decide_shadow_align(self, f: SceneFeatures) -> ControlDecision:
        """Shadow-alignment decision tree.

        Order of precedence: terminal check, safety retreat, alignment
        maintenance, then the axial/vertical corrections.  The retreat fires
        on needle-shadow proximity regardless of the remaining distances.
        """
        th = self.thresholds
        if f.p_ns is None or f.l_ns is None:
            # Shadow lost mid-stage.  If the tip already sits on the target's
            # image position the shadow can only have vanished into the needle
            # at contact range, so back off; otherwise re-enable it.
            if f.p_n.distance_to(f.p_t) <= th.sigma_app_px:
                return ControlDecision(StepCommand(StepKind.R_OUT_V_UP), self.phase,
                                       R_SAFETY_RETREAT)
            m = self.decide_horizontal(f, loosened=True, maintenance=True)
            if m is not None:
                return m
            # insertion descends toward the surface region where the shadow is
            # visible again; a vertical recovery here would just undo the next
            # tick's vertical correction and hover at the aperture edge
            return ControlDecision(StepCommand(StepKind.R_IN), self.phase,
                                   R_SHADOW_ENABLE)
        try:
            esp = expected_shadow_position(f)
        except NearParallel:
            self.phase = ControllerPhase.DEGENERATE
            return ControlDecision(None, ControllerPhase.DEGENERATE, R_NEEDS_LIGHT)
        d = distances(replace(f, p_nrcm=self.p_nrcm), p_esp=esp)
        gap = abs(d.d_lp_esp - d.d_lp_ts)
        if gap <= th.sigma_app_px and d.d_n_t <= th.sigma_app_px and d.d_ns_ts <= th.sigma_app_px:
            self.phase = ControllerPhase.DONE
            return ControlDecision(None, ControllerPhase.DONE, R_START_IOCT)
        # the retreat guards the approach, not the endgame: once the tip sits
        # on the target's image position the remaining moves are depth trims
        if d.d_n_ns <= th.sigma_app_px and d.d_n_t > th.sigma_app_px:
            return ControlDecision(StepCommand(StepKind.R_OUT_V_UP), self.phase,
                                   R_SAFETY_RETREAT)
        m = self.decide_horizontal(f, loosened=True, maintenance=True)
        if m is not None:
            return m
        if gap <= th.sigma_app_px:
            if d.d_nrcm_n < d.d_nrcm_t:
                return ControlDecision(StepCommand(StepKind.R_IN), self.phase,
                                       R_AXIAL_INSERTION)
            return ControlDecision(StepCommand(StepKind.R_OUT), self.phase,
                                   R_AXIAL_RETRACTION)
        # a clearly overshot tip must come back first: vertical rotations keep
        # pushing its projection outward and the depth cue applies to the
        # insertion path toward the target, not past it
        if d.d_nrcm_n > d.d_nrcm_t + th.sigma_app_px:
            return ControlDecision(StepCommand(StepKind.R_OUT), self.phase,
                                   R_AXIAL_RETRACTION)
        # within the terminal window depth is trimmed with bare vertical steps
        # so one tick cannot jump across the whole stopping band
        compensate = d.d_n_t > th.sigma_app_px
        if d.d_lp_ts < d.d_lp_esp:
            cmd = _V_COMP_DOWN if compensate else StepCommand(StepKind.V_DOWN)
            return ControlDecision(cmd, self.phase, R_VERTICAL_DOWN)
        cmd = _V_COMP_UP if compensate else StepCommand(StepKind.V_UP)
        return ControlDecision(cmd, self.phase, R_VERTICAL_UP)

    # -- dispatch --------------------------------------------------------------

    def tick(self, f: SceneFeatures) -> ControlDecision:
        """Exactly one decision per frame; deterministic in (features, phase)."""
        if self.phase is ControllerPhase.DONE:
            return ControlDecision(None, ControllerPhase.DONE, R_DONE)
        if self.phase is ControllerPhase.DEGENERATE:
            # a scripted light adjustment may have cleared the degeneracy
            if self.p_nrcm is None:
                return self._tick_calibration(f) or self.tick(f)
            self.phase = ControllerPhase.SHADOW_ALIGN

        if self.phase is ControllerPhase.CALIBRATING:
            dec = self._tick_calibration(f)
            if dec is not None:
                return dec

        if self.phase is ControllerPhase.HORIZONTAL_ALIGN:
            dec = self.decide_horizontal(f)
            if dec is not None:
                return dec
            self.phase = ControllerPhase.SHADOW_ENABLE

        if self.phase is ControllerPhase.SHADOW_ENABLE:
            m = self.decide_horizontal(f, maintenance=True)
            if m is not None:
                return m
            dec = self.decide_shadow_enable(f)
            if dec is not None:
                return dec
            self.phase = ControllerPhase.SHADOW_ALIGN

        return self.decide_shadow_align(f)


class MissingTrocarEstimate(Exception):
    """Angle-based tests need the calibrated trocar projection."""
