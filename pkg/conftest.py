import dataclasses
import os

import hypothesis
import numpy as np
import pytest

from design_config import load_config
from pointcond import ParameterBox

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=100, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=500, deadline=None, derandomize=True)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))

ROOT = os.path.dirname(os.path.abspath(__file__))

# The mapped region is a thin band around a1 ≈ tau_q·a0; this box keeps it
# several cells wide at a coarse raster.
FOCUSED_BOX = ParameterBox(1.0e10, 1.0e11, 1.0e5, 1.0e6, True, True)
FOCUSED_RASTER = (128, 128)


@pytest.fixture(scope="session")
def afm_config():
    return load_config(os.path.join(ROOT, "config.yaml"))


@pytest.fixture(scope="session")
def minimal_config():
    return load_config(os.path.join(ROOT, "configs", "minimal.yaml"))


@pytest.fixture(scope="session")
def afm_focused(afm_config):
    """AFM config on the focused box and raster"""
    selection = dataclasses.replace(afm_config.selection, box=FOCUSED_BOX)
    return dataclasses.replace(afm_config, selection=selection, raster=FOCUSED_RASTER,
                               theta_resolution=1024)


@pytest.fixture(scope="session")
def afm_map(afm_focused):
    from regions import ParameterGrid, RegionMapper

    cfg = afm_focused
    grid = ParameterGrid(cfg.selection.box, *cfg.raster)
    mapper = RegionMapper(cfg.plant, cfg.controller, cfg.selection, grid,
                          cfg.theta_resolution, cfg.regen_points)
    return mapper.run(cfg.schedule, stability=True)


@pytest.fixture(scope="session")
def afm_shipped_map(afm_config):
    """Design rows of the AFM config mapped on its own box and raster"""
    from regions import ParameterGrid, RegionMapper

    cfg = afm_config
    grid = ParameterGrid(cfg.selection.box, *cfg.raster)
    mapper = RegionMapper(cfg.plant, cfg.controller, cfg.selection, grid,
                          cfg.theta_resolution, cfg.regen_points)
    return mapper.run(cfg.schedule, stability=False)
