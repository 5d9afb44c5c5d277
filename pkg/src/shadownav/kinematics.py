"""Spherical remote-center-of-motion kinematics for needle and light probe.

Both instruments pivot about a fixed trocar point on the eye surface.  A
pose is the tuple (r, theta_h, theta_v): axial insertion depth along the
shaft, azimuth of the shaft around the vertical, and polar tilt measured
from straight down.  theta_v = 0 points the shaft at -z, and increasing
theta_v tilts it toward horizontal, which raises the tip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .geometry import EyeModel, Pixel, Vec3, project


class InvalidCount(Exception):
    """Requested sample count too small to describe a shaft."""


class RangeViolation(Exception):
    """A step would push r below 0 or theta_v out of [0, 90) degrees."""


class StepKind(Enum):
    R_IN = "r_in"
    R_OUT = "r_out"
    V_UP = "v_up"
    V_DOWN = "v_down"
    H_CW = "h_cw"
    H_CCW = "h_ccw"
    R_OUT_V_UP = "r_out_v_up"
    V_COMPENSATED = "v_compensated"


@dataclass(frozen=True, slots=True)
class StepCommand:
    """One discrete motion command; magnitudes come from StepSizes.

    V_COMPENSATED carries the vertical sign (+1 up / -1 down) because the
    compensated rotation is used in both directions.
    """

    kind: StepKind
    v_sign: int = 0

    def __post_init__(self):
        if self.kind is StepKind.V_COMPENSATED:
            if self.v_sign not in (-1, 1):
                raise ValueError("V_COMPENSATED requires v_sign of -1 or +1")
        elif self.v_sign != 0:
            raise ValueError(f"{self.kind} does not take a v_sign")

    def label(self) -> str:
        if self.kind is StepKind.V_COMPENSATED:
            return f"{self.kind.value}_{'up' if self.v_sign > 0 else 'down'}"
        return self.kind.value


@dataclass(frozen=True, slots=True)
class StepSizes:
    """Per-step magnitudes for the three motion axes."""

    delta_r_mm: float = 0.167
    delta_v_deg: float = 0.2
    delta_h_deg: float = 0.2

    def __post_init__(self):
        if min(self.delta_r_mm, self.delta_v_deg, self.delta_h_deg) <= 0.0:
            raise ValueError("step sizes must be positive")


@dataclass(frozen=True, slots=True)
class RcmState:
    """Pose of an instrument pivoting about its trocar."""

    trocar: Vec3
    r: float
    theta_h: float  # degrees
    theta_v: float  # degrees, 0 = straight down, in [0, 90)

    def __post_init__(self):
        if self.r < 0.0:
            raise ValueError("insertion depth r must be >= 0")
        if not 0.0 <= self.theta_v < 90.0:
            raise ValueError("theta_v must lie in [0, 90) degrees")


class NeedleState(RcmState):
    pass


class LightProbeState(RcmState):
    pass


def shaft_direction(state: RcmState) -> Vec3:
    tv = math.radians(state.theta_v)
    th = math.radians(state.theta_h)
    s = math.sin(tv)
    return Vec3(s * math.cos(th), s * math.sin(th), -math.cos(tv))


def forward_tip(state: RcmState) -> Vec3:
    """Tip position: trocar + r * shaft direction.

    The tip z is trocar.z - r*cos(theta_v) and does not involve theta_h at
    all, so horizontal rotation leaves depth exactly unchanged.
    """
    d = shaft_direction(state)
    return Vec3(state.trocar.x + state.r * d.x,
                state.trocar.y + state.r * d.y,
                state.trocar.z + state.r * d.z)


def shaft_sample(state: RcmState, n: int) -> list[Vec3]:
    """n collinear points from the trocar entry to the tip, tip included."""
    if n < 2:
        raise InvalidCount(f"need at least 2 shaft samples, got {n}")
    if state.r <= 0.0:
        raise ValueError("shaft_sample requires positive insertion depth")
    d = shaft_direction(state)
    t = state.trocar
    out = []
    for k in range(n):
        rk = state.r * (k / (n - 1))
        out.append(Vec3(t.x + rk * d.x, t.y + rk * d.y, t.z + rk * d.z))
    return out


def _checked(state: RcmState, *, r: float | None = None, theta_v: float | None = None,
             theta_h: float | None = None) -> RcmState:
    new_r = state.r if r is None else r
    new_v = state.theta_v if theta_v is None else theta_v
    if new_r < 0.0:
        raise RangeViolation(f"insertion depth would become negative ({new_r:.4f} mm)")
    if not 0.0 <= new_v < 90.0:
        raise RangeViolation(f"theta_v would leave [0, 90) ({new_v:.4f} deg)")
    kwargs = {}
    if r is not None:
        kwargs["r"] = r
    if theta_v is not None:
        kwargs["theta_v"] = theta_v
    if theta_h is not None:
        kwargs["theta_h"] = theta_h
    return replace(state, **kwargs)


def apply_step(state: RcmState, cmd: StepCommand, steps: StepSizes, *,
               eye: EyeModel | None = None, target_px: Pixel | None = None) -> RcmState:
    """Apply one step command; the trocar never moves (RCM constraint).

    V_COMPENSATED is one vertical step followed by up to 3 axial insertions
    while the projected tip-target distance exceeds its pre-step value; it
    therefore needs the eye model and the target pixel for the projection.
    """
    kind = cmd.kind
    if kind is StepKind.R_IN:
        return _checked(state, r=state.r + steps.delta_r_mm)
    if kind is StepKind.R_OUT:
        return _checked(state, r=state.r - steps.delta_r_mm)
    if kind is StepKind.V_UP:
        return _checked(state, theta_v=state.theta_v + steps.delta_v_deg)
    if kind is StepKind.V_DOWN:
        return _checked(state, theta_v=state.theta_v - steps.delta_v_deg)
    if kind is StepKind.H_CW:
        return _checked(state, theta_h=state.theta_h - steps.delta_h_deg)
    if kind is StepKind.H_CCW:
        return _checked(state, theta_h=state.theta_h + steps.delta_h_deg)
    if kind is StepKind.R_OUT_V_UP:
        # safety retreat: axial fallback plus upward rotation, both raise the tip
        return _checked(state, r=state.r - steps.delta_r_mm,
                        theta_v=state.theta_v + steps.delta_v_deg)
    if kind is StepKind.V_COMPENSATED:
        if eye is None or target_px is None:
            raise ValueError("V_COMPENSATED needs eye and target_px for compensation")
        d0 = project(forward_tip(state), eye).distance_to(target_px)
        new = _checked(state, theta_v=state.theta_v + cmd.v_sign * steps.delta_v_deg)
        dist = project(forward_tip(new), eye).distance_to(target_px)
        # 2 px of slack keeps near-vertical shafts from piling up insertions
        # whose projected effect is negligible but whose descent is not
        for _ in range(3):
            if dist <= d0 + 2.0:
                break
            deeper = _checked(new, r=new.r + steps.delta_r_mm)
            deeper_dist = project(forward_tip(deeper), eye).distance_to(target_px)
            if deeper_dist >= dist:  # inserting would not recover the loss
                break
            new, dist = deeper, deeper_dist
        return new
    raise ValueError(f"unknown step kind {kind}")
