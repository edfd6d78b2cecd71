import os

import numpy as np
import pytest

from aple_core.channel import Scene, near_field_channel, snr_to_noise_var, synthesize_snapshot
from aple_core.geometry import build_array, partition, wavelength_from_frequency

WAVELENGTH = wavelength_from_frequency(28e9)


@pytest.fixture
def wavelength():
    return WAVELENGTH


@pytest.fixture
def small_array():
    """12x12 half-wavelength array in 2x2 subarrays."""
    geometry = build_array(12, 12, WAVELENGTH / 2, WAVELENGTH / 2, WAVELENGTH, allow_even=True)
    return geometry, partition(geometry, 2, 2)


@pytest.fixture
def fig3_array():
    """30x30 quarter-wavelength array in 3x3 subarrays."""
    geometry = build_array(30, 30, WAVELENGTH / 4, WAVELENGTH / 4, WAVELENGTH, allow_even=True)
    return geometry, partition(geometry, 3, 3)


def make_snapshot(geometry, plan, p_user, snr_db=None, seed=0):
    h = near_field_channel(geometry, Scene(p_user=p_user))
    noise_var = 0.0 if snr_db is None else snr_to_noise_var(h, 1.0, snr_db)
    return synthesize_snapshot(h, Scene(p_user=p_user, noise_var=noise_var, rng_seed=seed), plan)


@pytest.fixture
def snapshot_of():
    return make_snapshot


@pytest.fixture
def clean_env(mocker):
    """Process environment without APLE_* settings, restored after the test."""
    mocker.patch.dict(os.environ)
    for name in [key for key in os.environ if key.startswith("APLE_")]:
        del os.environ[name]
