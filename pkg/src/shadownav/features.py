"""2D observation layer: what the controller is allowed to see.

Converts ground-truth 3D state into projected feature points and fitted
lines, and computes the derived 2D quantities (trocar projection estimate,
expected shadow position, pixel distances) that drive the decision logic.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .geometry import (EyeModel, Line2, Pixel, Vec3, in_limbus_disc, project,
                       ray_sphere_far_intersection)
from .kinematics import RcmState, forward_tip, shaft_direction, shaft_sample


class IllConditioned(Exception):
    """Line bundle too close to parallel to locate a pivot point."""


class NearParallel(Exception):
    """Light-target ray and shadow line nearly parallel; no usable intersection."""


class MissingFeature(Exception):
    """A requested quantity needs a feature that is absent from the frame."""


@dataclass(frozen=True, slots=True)
class TargetSpec:
    """Point target, either floating in the vitreous or on the retina."""

    kind: str  # "floating" or "retinal"
    position: Vec3

    def __post_init__(self):
        if self.kind not in ("floating", "retinal"):
            raise ValueError(f"unknown target kind {self.kind!r}")


@dataclass(frozen=True, slots=True)
class SceneFeatures:
    """One microscope frame reduced to feature points and lines.

    p_ns and l_ns are None while the needle shadow is not visible.  p_nrcm
    is the estimated trocar projection, filled in after calibration.
    """

    p_lp: Pixel
    p_n: Pixel
    l_n: Line2
    p_t: Pixel
    p_ts: Pixel
    p_ns: Pixel | None = None
    l_ns: Line2 | None = None
    p_nrcm: Pixel | None = None


@dataclass(frozen=True, slots=True)
class FeatureDistances:
    """Pixel distances and angles between frame features.

    Quantities whose inputs are absent from the frame are None; use
    require() where the caller's phase guarantees presence.
    """

    d_n_t: float
    d_lp_ts: float
    dist_t_to_ln: float
    d_ns_ts: float | None = None
    d_n_ns: float | None = None
    d_lp_esp: float | None = None
    d_nrcm_n: float | None = None
    d_nrcm_t: float | None = None
    angle_alignment: float | None = None  # degrees

    def require(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise MissingFeature(name)
        return value


# Needle shadow is declared invisible when it leaves the limbus aperture or
# hides behind the needle itself.
OCCLUSION_SEPARATION_PX = 2.0
# The shadow line is fitted to shadows of shaft samples near the tip; a short
# window keeps the secant fit close to the curved shadow track on the retina.
SHADOW_FIT_WINDOW_MM = 2.8
SHADOW_FIT_SAMPLES = 8
NEEDLE_FIT_SAMPLES = 8
PARALLEL_LIMIT_DEG = 0.5


def _noisy(px: Pixel, sigma: float, rng: random.Random | None) -> Pixel:
    if sigma <= 0.0 or rng is None:
        return px
    return Pixel(px.u + rng.gauss(0.0, sigma), px.v + rng.gauss(0.0, sigma))


def fit_direction(points: list[Pixel]) -> tuple[float, float]:
    """Total-least-squares principal direction of a pixel cloud."""
    n = len(points)
    mu = sum(p.u for p in points) / n
    mv = sum(p.v for p in points) / n
    suu = svv = suv = 0.0
    for p in points:
        du, dv = p.u - mu, p.v - mv
        suu += du * du
        svv += dv * dv
        suv += du * dv
    ang = 0.5 * math.atan2(2.0 * suv, suu - svv)
    return math.cos(ang), math.sin(ang)


def _oriented_line(anchor: Pixel, points: list[Pixel], toward: Pixel) -> Line2:
    dx, dy = fit_direction(points)
    # orient along increasing arc toward the anchor end of the track
    wu, wv = toward.u - points[0].u, toward.v - points[0].v
    if dx * wu + dy * wv < 0.0:
        dx, dy = -dx, -dy
    return Line2(anchor, dx, dy)


def observe(scene, *, noise_sigma_px: float = 0.0,
            rng: random.Random | None = None) -> SceneFeatures:
    """Project the ground-truth scene into one frame of features.

    Optional zero-mean Gaussian pixel noise of ``noise_sigma_px`` is applied
    to every reported point; at the default sigma 0 the output is a pure
    function of the scene.
    """
    eye: EyeModel = scene.eye
    light_tip = forward_tip(scene.light)
    needle_tip = forward_tip(scene.needle)

    p_lp = _noisy(project(light_tip, eye), noise_sigma_px, rng)
    p_n = _noisy(project(needle_tip, eye), noise_sigma_px, rng)

    shaft = shaft_sample(scene.needle, NEEDLE_FIT_SAMPLES)
    shaft_px = [_noisy(project(q, eye), noise_sigma_px, rng) for q in shaft]
    l_n = _oriented_line(p_n, shaft_px, p_n)

    # shadow track of the shaft segment nearest the tip
    d = shaft_direction(scene.needle)
    t = scene.needle.trocar
    r_lo = max(0.0, scene.needle.r - SHADOW_FIT_WINDOW_MM)
    shadow_px = []
    for k in range(SHADOW_FIT_SAMPLES):
        rk = r_lo + (scene.needle.r - r_lo) * (k / (SHADOW_FIT_SAMPLES - 1))
        q = Vec3(t.x + rk * d.x, t.y + rk * d.y, t.z + rk * d.z)
        s = ray_sphere_far_intersection(light_tip, q, eye)
        shadow_px.append(_noisy(project(s, eye), noise_sigma_px, rng))
    tip_shadow = ray_sphere_far_intersection(light_tip, needle_tip, eye)
    p_ns = _noisy(project(tip_shadow, eye), noise_sigma_px, rng)
    l_ns = _oriented_line(p_ns, shadow_px, p_ns)

    p_t = _noisy(project(scene.target.position, eye), noise_sigma_px, rng)
    target_shadow = ray_sphere_far_intersection(light_tip, scene.target.position, eye)
    p_ts = _noisy(project(target_shadow, eye), noise_sigma_px, rng)

    visible = (in_limbus_disc(p_ns, eye)
               and p_n.distance_to(p_ns) > OCCLUSION_SEPARATION_PX)
    if not visible:
        p_ns, l_ns = None, None

    return SceneFeatures(p_lp=p_lp, p_n=p_n, l_n=l_n, p_t=p_t, p_ts=p_ts,
                         p_ns=p_ns, l_ns=l_ns)


def line_angle_deg(a: Line2, b: Line2) -> float:
    """Acute angle between two undirected lines, in degrees."""
    cross = a.dx * b.dy - a.dy * b.dx
    dot = a.dx * b.dx + a.dy * b.dy
    return math.degrees(math.atan2(abs(cross), abs(dot)))


def estimate_trocar_projection(lines: list[Line2]) -> Pixel:
    """Least-squares point minimizing squared perpendicular distance to all lines."""
    if len(lines) < 2:
        raise IllConditioned("need at least 2 needle lines")
    spread = max(line_angle_deg(a, b)
                 for i, a in enumerate(lines) for b in lines[i + 1:])
    if spread <= PARALLEL_LIMIT_DEG:
        raise IllConditioned(
            f"all pairwise line angles <= {PARALLEL_LIMIT_DEG} deg (max {spread:.3f})")
    a = np.zeros((2, 2))
    b = np.zeros(2)
    for ln in lines:
        d = np.array([ln.dx, ln.dy])
        p = np.array([ln.point.u, ln.point.v])
        proj = np.eye(2) - np.outer(d, d)
        a += proj
        b += proj @ p
    sol = np.linalg.lstsq(a, b, rcond=None)[0]
    return Pixel(float(sol[0]), float(sol[1]))


def intersect_lines(a: Line2, b: Line2) -> Pixel:
    """Intersection point of two non-parallel lines."""
    denom = a.dx * b.dy - a.dy * b.dx
    wu, wv = b.point.u - a.point.u, b.point.v - a.point.v
    t = (wu * b.dy - wv * b.dx) / denom
    return Pixel(a.point.u + t * a.dx, a.point.v + t * a.dy)


def expected_shadow_position(f: SceneFeatures) -> Pixel:
    """Predicted needle-shadow position when the tip reaches the target.

    Intersects the projected light-through-target ray with the fitted shadow
    line.  Raises NearParallel in the degenerate configuration where light
    tip, needle and needle shadow line up in the image.
    """
    if f.l_ns is None:
        raise MissingFeature("l_ns")
    if f.p_lp.distance_to(f.p_t) < 1e-9:
        raise NearParallel("light tip projects onto the target")
    light_ray = Line2.through(f.p_lp, f.p_t)
    if line_angle_deg(light_ray, f.l_ns) <= PARALLEL_LIMIT_DEG:
        raise NearParallel("light-target ray nearly parallel to the shadow line")
    return intersect_lines(light_ray, f.l_ns)


def angle_between_deg(base: Pixel, a: Pixel, b: Pixel) -> float:
    """Unsigned angle at ``base`` between rays toward a and b, in degrees."""
    au, av = a.u - base.u, a.v - base.v
    bu, bv = b.u - base.u, b.v - base.v
    cross = au * bv - av * bu
    dot = au * bu + av * bv
    return abs(math.degrees(math.atan2(cross, dot)))


def distances(f: SceneFeatures, p_esp: Pixel | None = None) -> FeatureDistances:
    """All pairwise quantities computable from the present features."""
    d_ns_ts = f.p_ns.distance_to(f.p_ts) if f.p_ns is not None else None
    d_n_ns = f.p_n.distance_to(f.p_ns) if f.p_ns is not None else None
    d_lp_esp = f.p_lp.distance_to(p_esp) if p_esp is not None else None
    if f.p_nrcm is not None:
        d_nrcm_n = f.p_nrcm.distance_to(f.p_n)
        d_nrcm_t = f.p_nrcm.distance_to(f.p_t)
        angle = angle_between_deg(f.p_nrcm, f.p_n, f.p_t)
    else:
        d_nrcm_n = d_nrcm_t = angle = None
    return FeatureDistances(
        d_n_t=f.p_n.distance_to(f.p_t),
        d_lp_ts=f.p_lp.distance_to(f.p_ts),
        dist_t_to_ln=f.l_n.perpendicular_distance(f.p_t),
        d_ns_ts=d_ns_ts,
        d_n_ns=d_n_ns,
        d_lp_esp=d_lp_esp,
        d_nrcm_n=d_nrcm_n,
        d_nrcm_t=d_nrcm_t,
        angle_alignment=angle,
    )
