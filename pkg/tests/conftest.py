"""Shared fixtures: seeded generators, a small object and scenes built from it."""
import numpy as np
import pytest

from radialpose.config import NoiseModel, PipelineParams, SceneConfig
from radialpose.geometry import RigidTransform
from radialpose.simulator import build_object, random_rotation, scene_from_config


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_transform(rng, translation_scale=1.0):
    return RigidTransform(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, size=3))


@pytest.fixture
def small_recipe():
    return SceneConfig(shape="blobby", model_points=400, clutter_fraction=0.5)


@pytest.fixture
def small_object(small_recipe):
    return build_object(small_recipe, 3)


@pytest.fixture
def cluttered_scene(small_recipe, small_object):
    model, keypoints = small_object
    return scene_from_config(small_recipe, model, keypoints, rng_seed=7)


@pytest.fixture
def fast_params():
    return PipelineParams(N=4096, M=128, rho=0.03)


@pytest.fixture
def clean_noise():
    return NoiseModel()
