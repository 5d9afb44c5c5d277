"""3D primitives, the spherical eye model, vertical projection and shadow casting.

All lengths are millimeters in an eye-centered frame (origin at the eye
center, +z toward the microscope).  Image coordinates are pixels with the
v axis pointing down, so +y in the eye maps to -v in the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class DegenerateRay(Exception):
    """Ray origin and through-point coincide, no direction can be formed."""


@dataclass(frozen=True, slots=True)
class Vec3:
    """Point or displacement in the eye-centered frame (mm)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError("Vec3 components must be finite, got "
                             f"({self.x}, {self.y}, {self.z})")

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scaled(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


# Image scale chosen so 1024 px span the 12 mm limbus diameter.
DEFAULT_PX_PER_MM = 1024.0 / 12.0


@dataclass(frozen=True, slots=True)
class EyeModel:
    """Spherical eye with a circular limbus aperture at the top.

    The microscope view is an orthographic projection along -z with uniform
    scale ``px_per_mm``; the limbus disc is the visible part of the scene.
    """

    radius_mm: float = 12.0
    limbus_radius_mm: float = 6.0
    image_size_px: int = 1024
    px_per_mm: float = DEFAULT_PX_PER_MM

    def __post_init__(self):
        if not 0.0 < self.limbus_radius_mm < self.radius_mm:
            raise ValueError("limbus radius must satisfy 0 < limbus < eye radius")
        if self.image_size_px <= 0:
            raise ValueError("image_size_px must be positive")
        if self.px_per_mm <= 0.0:
            raise ValueError("px_per_mm must be positive")
        # limbus disc must fit the image (touching the border is allowed)
        if self.limbus_radius_mm * self.px_per_mm > self.image_size_px / 2 + 1e-9:
            raise ValueError("limbus disc projects outside the image")

    @property
    def image_center_px(self) -> float:
        return self.image_size_px / 2.0

    @property
    def limbus_radius_px(self) -> float:
        return self.limbus_radius_mm * self.px_per_mm

    @property
    def limbus_plane_z(self) -> float:
        """Height of the limbus circle on the sphere."""
        return math.sqrt(self.radius_mm ** 2 - self.limbus_radius_mm ** 2)


@dataclass(frozen=True, slots=True)
class Pixel:
    """Continuous image coordinates (u right, v down)."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError(f"Pixel coordinates must be finite, got ({self.u}, {self.v})")

    def distance_to(self, other: "Pixel") -> float:
        return math.hypot(self.u - other.u, self.v - other.v)


@dataclass(frozen=True, slots=True)
class Line2:
    """Image line through ``point`` with unit direction (dx, dy)."""

    point: Pixel
    dx: float
    dy: float

    def __post_init__(self):
        n = math.hypot(self.dx, self.dy)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"Line2 direction must be unit length, |d|={n}")

    @staticmethod
    def through(a: Pixel, b: Pixel) -> "Line2":
        """Line through two distinct pixels, oriented a -> b."""
        du, dv = b.u - a.u, b.v - a.v
        n = math.hypot(du, dv)
        if n < 1e-12:
            raise ValueError("cannot form a line through coincident pixels")
        return Line2(a, du / n, dv / n)

    def perpendicular_distance(self, p: Pixel) -> float:
        """Unsigned distance from p to the (infinite) line."""
        wu, wv = p.u - self.point.u, p.v - self.point.v
        return abs(wu * self.dy - wv * self.dx)


def project(p: Vec3, eye: EyeModel) -> Pixel:
    """Orthographic projection along -z onto the image plane.

    z is discarded entirely: vertical 3D lines map to single pixels, which
    is what makes shadow positions a usable depth cue in the image.
    """
    c = eye.image_center_px
    return Pixel(c + eye.px_per_mm * p.x, c - eye.px_per_mm * p.y)


def in_limbus_disc(px: Pixel, eye: EyeModel) -> bool:
    """Whether an image point falls inside the visible limbus aperture."""
    c = eye.image_center_px
    return math.hypot(px.u - c, px.v - c) <= eye.limbus_radius_px


def ray_sphere_far_intersection(origin: Vec3, through: Vec3, eye: EyeModel) -> Vec3:
    """Far intersection of the ray origin->through with the eye sphere.

    Returns the intersection with the larger ray parameter, i.e. the point
    past ``through`` when ``through`` is inside the sphere.  For a
    through-point already on the sphere this is the point itself.
    """
    d = through - origin
    dd = d.dot(d)
    if dd < 1e-18:  # |through - origin| < 1e-9
        raise DegenerateRay("ray origin and through-point coincide")
    # |origin + t*d|^2 = R^2  ->  dd*t^2 + 2*(origin.d)*t + (|origin|^2 - R^2) = 0
    b = origin.dot(d)
    c = origin.dot(origin) - eye.radius_mm ** 2
    disc = b * b - dd * c
    if disc < 0.0:
        raise ValueError("ray does not intersect the sphere (origin outside?)")
    t = (-b + math.sqrt(disc)) / dd
    return origin + d.scaled(t)


def cast_shadow(light_tip: Vec3, obj: Vec3, eye: EyeModel) -> Vec3:
    """Shadow of a point object on the retinal sphere.

    The shadow is where the light ray through the object meets the sphere,
    so the object always lies on the 3D segment [light_tip, shadow] and its
    projection lies on the projected segment.
    """
    return ray_sphere_far_intersection(light_tip, obj, eye)


def retina_clearance(p: Vec3, eye: EyeModel) -> float:
    """Radial clearance from the retinal surface; negative means penetration."""
    return eye.radius_mm - p.norm()
