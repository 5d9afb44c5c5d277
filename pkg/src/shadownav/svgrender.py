"""Per-step SVG frames of the projected scene for qualitative inspection.

Only projected primitives are drawn: needle line (green), needle shadow
(dark gray), target (red), target shadow (dark red), light tip (orange)
and the expected shadow position (blue cross).
"""

from __future__ import annotations

from .features import SceneFeatures
from .geometry import EyeModel, Pixel, project


def _dot(p: Pixel, r: float, color: str, title: str) -> str:
    return (f'<circle cx="{p.u:.2f}" cy="{p.v:.2f}" r="{r}" fill="{color}">'
            f'<title>{title}</title></circle>')


def _cross(p: Pixel, r: float, color: str, title: str) -> str:
    return (f'<g stroke="{color}" stroke-width="2"><title>{title}</title>'
            f'<line x1="{p.u - r:.2f}" y1="{p.v - r:.2f}" x2="{p.u + r:.2f}" y2="{p.v + r:.2f}"/>'
            f'<line x1="{p.u - r:.2f}" y1="{p.v + r:.2f}" x2="{p.u + r:.2f}" y2="{p.v - r:.2f}"/></g>')


def render_frame(scene, f: SceneFeatures, phase_label: str,
                 esp: Pixel | None = None) -> str:
    """One SVG frame from the ground-truth scene and its observed features."""
    eye: EyeModel = scene.eye
    size = eye.image_size_px
    c = eye.image_center_px
    trocar_px = project(scene.needle.trocar, eye)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}" version="1.1">',
        f'<rect width="{size}" height="{size}" fill="#fdf6ec"/>',
        f'<circle cx="{c}" cy="{c}" r="{eye.limbus_radius_px:.2f}" fill="#fff7e0" '
        f'stroke="#c8b89a" stroke-width="2"/>',
    ]
    if f.p_ns is not None and f.l_ns is not None:
        ext = 90.0
        a = Pixel(f.p_ns.u - f.l_ns.dx * ext, f.p_ns.v - f.l_ns.dy * ext)
        parts.append(f'<line x1="{a.u:.2f}" y1="{a.v:.2f}" x2="{f.p_ns.u:.2f}" '
                     f'y2="{f.p_ns.v:.2f}" stroke="#555555" stroke-width="4" '
                     f'stroke-linecap="round"><title>needle shadow</title></line>')
        parts.append(_dot(f.p_ns, 4, "#555555", "needle shadow tip"))
    parts.append(f'<line x1="{trocar_px.u:.2f}" y1="{trocar_px.v:.2f}" '
                 f'x2="{f.p_n.u:.2f}" y2="{f.p_n.v:.2f}" stroke="#1a9641" '
                 f'stroke-width="5" stroke-linecap="round"><title>needle</title></line>')
    parts.append(_dot(f.p_n, 5, "#1a9641", "needle tip"))
    parts.append(_dot(f.p_ts, 5, "#7f1d1d", "target shadow"))
    parts.append(_dot(f.p_t, 5, "#e31a1c", "target"))
    parts.append(_dot(f.p_lp, 6, "#ff9900", "light tip"))
    if esp is not None:
        parts.append(_cross(esp, 7, "#1f78b4", "expected shadow position"))
    parts.append(f'<text x="12" y="28" font-family="monospace" font-size="22" '
                 f'fill="#333">{phase_label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
