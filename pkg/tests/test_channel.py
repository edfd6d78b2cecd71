import numpy as np
import pytest

from aple_core.channel import (
    Scene,
    SubarrayFarFieldModel,
    dump_snapshot,
    near_field_channel,
    reassemble,
    snr_to_noise_var,
    steering_vector,
    synthesize_snapshot,
)
from aple_core.geometry import AoaPair, build_array, partition, subarray_aoa


def test_scene_validation():
    with pytest.raises(ValueError, match="noise_var"):
        Scene(p_user=[0, 0, 1], noise_var=-1.0)
    with pytest.raises(ValueError, match="pilot"):
        Scene(p_user=[0, 0, 1], pilot=0.0)
    assert Scene(p_user=[0, 0, 1]).p_user.shape == (3,)


def test_near_field_channel_amplitude_and_phase(small_array, wavelength):
    geometry, _ = small_array
    p_user = np.array([0.05, 0.02, 0.8])
    h = near_field_channel(geometry, Scene(p_user=p_user, beta=2.0))
    distances = np.linalg.norm(geometry.positions - p_user, axis=1)
    np.testing.assert_allclose(np.abs(h), 2.0 * wavelength / (4 * np.pi * distances))
    np.testing.assert_allclose(
        h / np.abs(h), np.exp(-2j * np.pi * distances / wavelength), atol=1e-12
    )


def test_near_field_channel_rejects_user_on_antenna(small_array):
    geometry, _ = small_array
    with pytest.raises(ValueError, match="coincides"):
        near_field_channel(geometry, Scene(p_user=geometry.positions[5]))


def test_steering_vector_properties(wavelength):
    aoa = AoaPair(0.3, -0.4)
    a = steering_vector(5, 3, wavelength / 2, wavelength / 2, wavelength, aoa)
    assert a.shape == (15,)
    np.testing.assert_allclose(np.abs(a), 1.0)
    # centre element of an odd array has zero phase
    assert a[7] == pytest.approx(1.0)
    mirrored = steering_vector(5, 3, wavelength / 2, wavelength / 2, wavelength, AoaPair(-0.3, 0.4))
    np.testing.assert_allclose(mirrored, np.conj(a))


def test_steering_vector_is_kronecker_product(wavelength):
    d = wavelength / 4
    aoa = AoaPair(0.1, 0.7)
    a = steering_vector(4, 6, d, d, wavelength, aoa)
    a_x = steering_vector(4, 1, d, d, wavelength, AoaPair(0.1, 0.0))
    a_y = steering_vector(1, 6, d, d, wavelength, AoaPair(0.0, 0.7))
    np.testing.assert_allclose(a, np.kron(a_x, a_y))


def test_far_field_model_matches_distant_subarray(wavelength):
    d = wavelength / 2
    geometry = build_array(5, 5, d, d, wavelength)
    plan = partition(geometry, 1, 1)
    p_user = np.array([20.0, -10.0, 100.0])
    h = near_field_channel(geometry, Scene(p_user=p_user))
    aoa = subarray_aoa(plan.centers[0], p_user)
    model = SubarrayFarFieldModel(alpha=1.0, aoa=aoa).predict(5, 5, d, d, wavelength)
    correlation = np.abs(np.vdot(model, h)) / (np.linalg.norm(model) * np.linalg.norm(h))
    assert correlation > 1 - 1e-6


def test_synthesize_snapshot_noiseless_and_seeded(small_array):
    geometry, plan = small_array
    p_user = np.array([0.0, 0.1, 1.0])
    h = near_field_channel(geometry, Scene(p_user=p_user))
    noiseless = synthesize_snapshot(h, Scene(p_user=p_user), plan)
    np.testing.assert_array_equal(noiseless.y, h)

    noisy = Scene(p_user=p_user, noise_var=1e-6, rng_seed=3)
    first = synthesize_snapshot(h, noisy, plan)
    second = synthesize_snapshot(h, noisy, plan)
    np.testing.assert_array_equal(first.y, second.y)
    assert first.noise_var == 1e-6


def test_synthesize_snapshot_noise_variance(wavelength):
    geometry = build_array(101, 101, wavelength / 2, wavelength / 2, wavelength)
    plan = partition(geometry, 1, 1)
    h = np.zeros(geometry.n_antennas, dtype=complex)
    snapshot = synthesize_snapshot(h, Scene(p_user=[0, 0, 1], noise_var=2.0, rng_seed=1), plan)
    assert np.mean(np.abs(snapshot.y) ** 2) == pytest.approx(2.0, rel=0.05)


def test_synthesize_snapshot_rejects_wrong_length(small_array):
    _, plan = small_array
    with pytest.raises(ValueError, match="plan covers"):
        synthesize_snapshot(np.ones(7, dtype=complex), Scene(p_user=[0, 0, 1]), plan)


def test_snr_to_noise_var(small_array):
    geometry, _ = small_array
    h = near_field_channel(geometry, Scene(p_user=[0.0, 0.0, 1.0]))
    sigma2 = snr_to_noise_var(h, 2.0, 10.0)
    assert sigma2 == pytest.approx(np.sum(np.abs(2.0 * h) ** 2) / (h.size * 10.0))
    with pytest.raises(ValueError, match="zero power"):
        snr_to_noise_var(np.zeros(4, dtype=complex), 1.0, 10.0)


def test_snr_round_trip_over_seeds(small_array):
    geometry, plan = small_array
    p_user = np.array([0.1, 0.0, 1.0])
    h = near_field_channel(geometry, Scene(p_user=p_user))
    sigma2 = snr_to_noise_var(h, 1.0, 5.0)
    measured = []
    for seed in range(200):
        scene = Scene(p_user, noise_var=sigma2, rng_seed=seed)
        noise = synthesize_snapshot(h, scene, plan).y - h
        measured.append(np.mean(np.abs(noise) ** 2))
    snr = np.mean(np.abs(h) ** 2) / np.mean(measured)
    assert 10 * np.log10(snr) == pytest.approx(5.0, abs=0.1)


def test_slices_and_reassemble(small_array):
    geometry, plan = small_array
    y = np.arange(geometry.n_antennas) + 1j
    h = near_field_channel(geometry, Scene(p_user=[0.0, 0.0, 1.0]))
    snapshot = synthesize_snapshot(h, Scene(p_user=[0.0, 0.0, 1.0]), plan)
    slices = snapshot.slices
    assert len(slices) == plan.m_count
    assert all(s.shape == (plan.sub_nx * plan.sub_ny,) for s in slices)
    np.testing.assert_array_equal(reassemble(slices, plan), snapshot.y)
    np.testing.assert_array_equal(
        reassemble([y[indices] for indices in plan.index_map], plan), y
    )


def test_dump_snapshot(tmp_path, small_array):
    geometry, plan = small_array
    h = near_field_channel(geometry, Scene(p_user=[0.0, 0.0, 1.0]))
    snapshot = synthesize_snapshot(h, Scene(p_user=[0.0, 0.0, 1.0]), plan)
    path = dump_snapshot(snapshot, tmp_path / "trace")
    assert path.suffix == ".npz"
    with np.load(path) as trace:
        np.testing.assert_array_equal(trace["y"], snapshot.y)
        np.testing.assert_array_equal(trace["index_map"], plan.index_map)


@pytest.mark.parametrize("tilt_deg", [0.0, 25.0])
def test_far_field_phase_error_is_bounded_beyond_subarray_limit(small_array, wavelength, tilt_deg):
    geometry, plan = small_array
    assert (plan.sub_nx, plan.sub_ny) == (6, 6)
    center = plan.centers[0]
    r = 10 * plan.sub_fraunhofer
    tilt, azimuth = np.deg2rad(tilt_deg), np.deg2rad(40.0)
    direction = np.array(
        [np.sin(tilt) * np.cos(azimuth), np.sin(tilt) * np.sin(azimuth), np.cos(tilt)]
    )
    p_user = center + r * direction
    h = near_field_channel(geometry, Scene(p_user=p_user))[plan.index_map[0]]
    d = wavelength / 2
    model = np.exp(-2j * np.pi * r / wavelength) * steering_vector(
        6, 6, d, d, wavelength, subarray_aoa(center, p_user)
    )
    phase_error = np.abs(np.angle(h * np.conj(model)))
    assert np.max(phase_error) < np.pi / 8 * plan.sub_fraunhofer / r
