import math

import pytest

from shadownav.config import RunConfig, build_scene, light_state, needle_state
from shadownav.features import TargetSpec
from shadownav.geometry import Vec3
from shadownav.kinematics import forward_tip


@pytest.fixture(scope="session")
def cfg():
    return RunConfig()


@pytest.fixture(scope="session")
def light_tip(cfg):
    return forward_tip(light_state(cfg))


def make_target(kind, x, y, z=None):
    if kind == "retinal" and z is None:
        z = -math.sqrt(144.0 - x * x - y * y)
    return TargetSpec(kind, Vec3(x, y, z))


def make_scene(cfg, target, seed=1, needle_pose=None, light_pose=None):
    return build_scene(cfg, target, seed, needle_pose=needle_pose,
                       light_pose=light_pose)
