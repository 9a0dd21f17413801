import shutil

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bimanual_aug.config import PipelineConfig
from bimanual_aug.pipeline import run_crosspaint, run_retarget
from bimanual_aug.robots import BUILTIN_ROBOTS
from bimanual_aug.synth import SynthScript, write_synth_dataset

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_source(tmp_path_factory):
    """Two short synthetic episodes (one per robot side) with ground truth."""
    root = tmp_path_factory.mktemp("small") / "src"
    write_synth_dataset(SynthScript(seed=7, num_frames=14, num_episodes=2), root)
    return root


@pytest.fixture(scope="session")
def small_pipeline(small_source, tmp_path_factory):
    """``small_source`` retargeted (σ=0) and cross-painted onto the bimanual UR5e."""
    base = tmp_path_factory.mktemp("small_pipe")
    cfg = PipelineConfig.from_dict({"seed": 7})
    run_retarget(small_source, base / "ret", cfg, jobs=1)
    run_crosspaint(base / "ret", BUILTIN_ROBOTS["ur5e_bimanual"], base / "aug", cfg, jobs=1)
    return {"src": small_source, "ret": base / "ret", "aug": base / "aug", "cfg": cfg}


def copy_tree(src, dst):
    shutil.copytree(src, dst)
    return dst
