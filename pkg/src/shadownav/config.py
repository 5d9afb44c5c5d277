"""Run configuration: JSON round-trip, env-var overrides, scene building.

Every default matches the simulation hyperparameters (thresholds, step
sizes, eye geometry, target distribution); the light pose and initial
needle pose are the recorded defaults of this simulator and can be
overridden per scenario.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

from .controller import Thresholds
from .engine import EpisodeLimits, EyeScene, LightAction, ScriptEntry, TargetSampler
from .features import TargetSpec
from .geometry import EyeModel, Vec3
from .kinematics import LightProbeState, NeedleState, StepSizes


class ConfigError(Exception):
    """Malformed configuration or scenario document."""


@dataclass(frozen=True, slots=True)
class ProbePose:
    """Instrument placement: trocar azimuth on the limbus circle plus pose."""

    trocar_azimuth_deg: float
    r_mm: float
    theta_h_deg: float
    theta_v_deg: float


DEFAULT_NEEDLE = ProbePose(trocar_azimuth_deg=90.0, r_mm=3.0,
                           theta_h_deg=310.0, theta_v_deg=20.0)
# Aimed across the eye so that no reachable target sits on the light's own
# vertical line (which would null the shadow depth cue) and so the straight
# line from the needle trocar through the light tip misses the bulk of the
# target distribution (the degenerate configuration of the esp intersection).
DEFAULT_LIGHT = ProbePose(trocar_azimuth_deg=210.0, r_mm=14.234168403310592,
                          theta_h_deg=32.613610443477896,
                          theta_v_deg=67.73888049686728)


@dataclass(frozen=True, slots=True)
class RunConfig:
    eye: EyeModel = field(default_factory=EyeModel)
    needle: ProbePose = DEFAULT_NEEDLE
    light: ProbePose = DEFAULT_LIGHT
    thresholds: Thresholds = field(default_factory=Thresholds)
    steps: StepSizes = field(default_factory=StepSizes)
    sampler: TargetSampler = field(default_factory=TargetSampler)
    limits: EpisodeLimits = field(default_factory=EpisodeLimits)
    noise_sigma_px: float = 0.0
    seed: int = 0


_SECTIONS = {
    "eye": EyeModel,
    "needle": ProbePose,
    "light": ProbePose,
    "thresholds": Thresholds,
    "steps": StepSizes,
    "sampler": TargetSampler,
    "limits": EpisodeLimits,
}
_SCALARS = ("noise_sigma_px", "seed")


def config_to_dict(cfg: RunConfig) -> dict:
    out = {name: asdict(getattr(cfg, name)) for name in _SECTIONS}
    for name in _SCALARS:
        out[name] = getattr(cfg, name)
    return out


def _build_section(cls, name: str, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {name!r}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(data) - set(_SECTIONS) - set(_SCALARS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build_section(cls, name, data[name])
    for name in _SCALARS:
        if name in data:
            value = data[name]
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{name} must be a number")
            kwargs[name] = value
    return RunConfig(**kwargs)


ENV_PREFIX = "SHADOWNAV_"


def apply_env_overrides(data: dict, environ=os.environ) -> dict:
    """Override config entries from SHADOWNAV_<SECTION>_<KEY> variables.

    Values are parsed as JSON, falling back to the raw string.  Top-level
    scalars use SHADOWNAV_SEED and SHADOWNAV_NOISE_SIGMA_PX.
    """
    out = json.loads(json.dumps(data))  # deep copy
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):].lower()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if rest in _SCALARS:
            out[rest] = value
            continue
        for section in _SECTIONS:
            if rest.startswith(section + "_"):
                out.setdefault(section, {})[rest[len(section) + 1:]] = value
                break
        else:
            raise ConfigError(f"unrecognized override variable {key}")
    return out


def load_config(path: str | None, environ=os.environ) -> RunConfig:
    data = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(apply_env_overrides(data, environ))


def save_config(cfg: RunConfig, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- scene construction -------------------------------------------------------

def trocar_on_limbus(eye: EyeModel, azimuth_deg: float) -> Vec3:
    a = math.radians(azimuth_deg)
    return Vec3(eye.limbus_radius_mm * math.cos(a),
                eye.limbus_radius_mm * math.sin(a),
                eye.limbus_plane_z)


def needle_state(cfg: RunConfig, pose: ProbePose | None = None) -> NeedleState:
    p = pose or cfg.needle
    return NeedleState(trocar_on_limbus(cfg.eye, p.trocar_azimuth_deg),
                       p.r_mm, p.theta_h_deg, p.theta_v_deg)


def light_state(cfg: RunConfig, pose: ProbePose | None = None) -> LightProbeState:
    p = pose or cfg.light
    return LightProbeState(trocar_on_limbus(cfg.eye, p.trocar_azimuth_deg),
                           p.r_mm, p.theta_h_deg, p.theta_v_deg)


def build_scene(cfg: RunConfig, target: TargetSpec, rng_seed: int,
                needle_pose: ProbePose | None = None,
                light_pose: ProbePose | None = None) -> EyeScene:
    return EyeScene(eye=cfg.eye,
                    needle=needle_state(cfg, needle_pose),
                    light=light_state(cfg, light_pose),
                    target=target,
                    rng_seed=rng_seed).validate()


# -- scenario files ------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Scenario:
    target: TargetSpec
    needle_pose: ProbePose | None = None
    light_pose: ProbePose | None = None
    script: tuple[ScriptEntry, ...] = ()
    seed: int | None = None


def _parse_script_entry(i: int, entry: dict) -> ScriptEntry:
    known = {"trigger", "kind", "amount"}
    unknown = set(entry) - known
    if unknown:
        raise ConfigError(f"script entry {i}: unknown keys {sorted(unknown)}")
    try:
        trigger = entry["trigger"]
        action = LightAction(kind=entry["kind"], amount=float(entry["amount"]))
    except KeyError as exc:
        raise ConfigError(f"script entry {i}: missing {exc}") from exc
    if trigger != "on_degenerate":
        if not isinstance(trigger, int) or isinstance(trigger, bool) or trigger < 0:
            raise ConfigError(f"script entry {i}: trigger must be "
                              f"'on_degenerate' or a step index")
    return ScriptEntry(trigger=trigger, action=action)


def parse_scenario(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    known = {"target", "needle", "light", "script", "seed"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        tgt = data["target"]
        kind = tgt["kind"]
        pos = tgt["position_mm"]
        target = TargetSpec(kind=kind, position=Vec3(*[float(v) for v in pos]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario target: {exc}") from exc
    needle_pose = (_build_section(ProbePose, "needle", data["needle"])
                   if "needle" in data else None)
    light_pose = (_build_section(ProbePose, "light", data["light"])
                  if "light" in data else None)
    script = tuple(_parse_script_entry(i, e)
                   for i, e in enumerate(data.get("script", [])))
    return Scenario(target=target, needle_pose=needle_pose,
                    light_pose=light_pose, script=script,
                    seed=data.get("seed"))


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return parse_scenario(data)
