import numpy as np
import pytest

from aple_core.baselines import (
    DictionaryBudgetError,
    PolarGrid,
    build_polar_grid,
    cartesian_to_polar,
    dictionary_bytes,
    local_polar_grid,
    mle_grid_oracle,
    mle_objective,
    omp_polar,
    polar_to_cartesian,
)
from aple_core.channel import Snapshot
from aple_core.data_models.models import GridConfig
from aple_core.geometry import build_array, partition

COARSE = GridConfig(
    r_step=0.05, angle_step_deg=0.5, half_cells_r=3, half_cells_angle=4, random_window=False
)


@pytest.fixture
def user():
    return polar_to_cartesian(1.2, 0.7, 0.3)


def test_polar_round_trip(user):
    r, omega, phi = cartesian_to_polar(user)
    assert (r, omega, phi) == pytest.approx((1.2, 0.7, 0.3))
    with pytest.raises(ValueError, match="origin"):
        cartesian_to_polar(np.zeros(3))


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"r_points": [], "omega_points": [0.0], "phi_points": [0.0]}, "r_points is empty"),
        ({"r_points": [1.0, 1.0], "omega_points": [0.0], "phi_points": [0.0]}, "increasing"),
        ({"r_points": [0.0, 1.0], "omega_points": [0.0], "phi_points": [0.0]}, "positive"),
    ],
)
def test_polar_grid_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        PolarGrid(**kwargs)


def test_polar_grid_flat_index_order():
    grid = PolarGrid(r_points=[1.0, 2.0], omega_points=[0.0, 0.5, 1.0], phi_points=[0.1, 0.2])
    assert grid.shape == (2, 3, 2)
    assert grid.size == 12
    # g = (i_r * n_omega + i_omega) * n_phi + i_phi
    index = (1 * 3 + 2) * 2 + 1
    np.testing.assert_allclose(grid.point(index), polar_to_cartesian(2.0, 1.0, 0.2))
    np.testing.assert_allclose(grid.points(4, 6), grid.points()[4:6])
    assert grid.points(10, 100).shape == (2, 3)


def test_build_polar_grid_axes():
    grid = build_polar_grid((1.0, 1.5), (0.0, np.deg2rad(1.0)), (0.0, np.deg2rad(0.5)), 0.1, 0.25)
    assert grid.shape == (6, 5, 3)
    assert grid.angle_step == pytest.approx(np.deg2rad(0.25))
    with pytest.raises(ValueError, match="steps"):
        build_polar_grid((1.0, 2.0), r_step=0.0)
    with pytest.raises(ValueError, match="reversed"):
        build_polar_grid((2.0, 1.0))


def test_local_grid_contains_reference(user):
    grid = local_polar_grid(user, COARSE)
    assert grid.shape == (7, 9, 9)
    center = (3 * 9 + 4) * 9 + 4
    np.testing.assert_allclose(grid.point(center), user, atol=1e-12)


def test_local_grid_offset_is_seeded_and_sub_cell(user):
    first = local_polar_grid(user, COARSE, np.random.default_rng(3))
    second = local_polar_grid(user, COARSE, np.random.default_rng(3))
    np.testing.assert_array_equal(first.r_points, second.r_points)
    r, omega, phi = cartesian_to_polar(user)
    assert np.min(np.abs(first.r_points - r)) <= 0.5 * COARSE.r_step
    assert np.min(np.abs(first.omega_points - omega)) <= 0.5 * first.angle_step
    assert np.min(np.abs(first.phi_points - phi)) <= 0.5 * first.angle_step


def test_random_window_moves_reference_inside_window(user):
    config = COARSE.model_copy(update={"random_window": True})
    r, omega, phi = cartesian_to_polar(user)
    positions = set()
    for seed in range(40):
        grid = local_polar_grid(user, config, np.random.default_rng(seed))
        assert grid.shape == (7, 9, 9)
        for points, value, step in (
            (grid.r_points, r, config.r_step),
            (grid.omega_points, omega, grid.angle_step),
            (grid.phi_points, phi, grid.angle_step),
        ):
            assert points[0] - 0.5 * step - 1e-12 <= value <= points[-1] + 0.5 * step + 1e-12
            assert np.min(np.abs(points - value)) <= 0.5 * step + 1e-12
        positions.add(int(np.argmin(np.abs(grid.r_points - r))))
    # nearest range cell is not pinned to the window center
    assert len(positions) >= 4
    assert positions != {3}


def test_local_grid_drops_non_positive_ranges():
    grid = local_polar_grid(np.array([0.0, 0.0, 0.08]), COARSE)
    assert np.all(grid.r_points > 0)
    assert grid.shape[0] < 7


def test_mle_returns_on_grid_user_exactly(small_array, snapshot_of, user):
    geometry, plan = small_array
    grid = local_polar_grid(user, COARSE)
    p_hat = mle_grid_oracle(snapshot_of(geometry, plan, user), geometry, grid)
    np.testing.assert_allclose(p_hat, user, atol=1e-12)


def test_mle_off_grid_user_within_one_cell(small_array, snapshot_of, user):
    geometry, plan = small_array
    grid = local_polar_grid(user, COARSE, np.random.default_rng(8))
    snapshot = snapshot_of(geometry, plan, user)
    p_hat = mle_grid_oracle(snapshot, geometry, grid)
    r_hat, omega_hat, phi_hat = cartesian_to_polar(p_hat)
    r, omega, phi = cartesian_to_polar(user)
    assert abs(r_hat - r) <= COARSE.r_step
    assert abs(omega_hat - omega) <= grid.angle_step
    assert abs(phi_hat - phi) <= grid.angle_step
    scores = mle_objective(snapshot, geometry, grid.points())
    assert mle_objective(snapshot, geometry, p_hat)[0] == pytest.approx(np.max(scores))


def test_mle_is_invariant_to_chunking_and_workers(small_array, snapshot_of, user):
    geometry, plan = small_array
    grid = local_polar_grid(user, COARSE, np.random.default_rng(1))
    snapshot = snapshot_of(geometry, plan, user, snr_db=10.0, seed=5)
    reference = mle_grid_oracle(snapshot, geometry, grid, chunk_size=grid.size)
    for chunk_size, workers in ((7, 1), (64, 3), (1000, 2)):
        p_hat = mle_grid_oracle(snapshot, geometry, grid, chunk_size=chunk_size, workers=workers)
        np.testing.assert_array_equal(p_hat, reference)


def test_mle_ties_go_to_lowest_index(small_array):
    geometry, plan = small_array
    snapshot = Snapshot(y=np.zeros(geometry.n_antennas, dtype=complex), plan=plan)
    grid = local_polar_grid(np.array([0.1, 0.1, 1.0]), COARSE)
    np.testing.assert_array_equal(
        mle_grid_oracle(snapshot, geometry, grid, chunk_size=10, workers=2), grid.point(0)
    )


def test_refining_grid_never_worsens_noiseless_error(small_array, snapshot_of, user):
    geometry, plan = small_array
    snapshot = snapshot_of(geometry, plan, user)
    coarse = GridConfig(r_step=0.04, angle_step_deg=0.4, half_cells_r=2, half_cells_angle=3)
    fine = GridConfig(r_step=0.02, angle_step_deg=0.2, half_cells_r=4, half_cells_angle=6)
    errors, scores = [], []
    for config in (coarse, fine):
        grid = local_polar_grid(1.003 * user, config)
        p_hat = mle_grid_oracle(snapshot, geometry, grid)
        errors.append(np.linalg.norm(p_hat - user))
        scores.append(mle_objective(snapshot, geometry, p_hat)[0])
    assert errors[1] <= errors[0] + 1e-12
    assert scores[1] >= scores[0] * (1 - 1e-12)


def test_omp_matches_mle_on_noiseless_input(small_array, snapshot_of, user):
    geometry, plan = small_array
    grid = local_polar_grid(user, COARSE, np.random.default_rng(2))
    snapshot = snapshot_of(geometry, plan, user)
    np.testing.assert_array_equal(
        omp_polar(snapshot, geometry, grid), mle_grid_oracle(snapshot, geometry, grid)
    )
    np.testing.assert_array_equal(
        omp_polar(snapshot, geometry, grid, n_iter=3), omp_polar(snapshot, geometry, grid)
    )


def test_omp_rejects_bad_iteration_count(small_array, snapshot_of, user):
    geometry, plan = small_array
    grid = local_polar_grid(user, COARSE)
    with pytest.raises(ValueError, match="n_iter"):
        omp_polar(snapshot_of(geometry, plan, user), geometry, grid, n_iter=0)


def test_omp_budget_is_checked_before_building(mocker, wavelength):
    geometry = build_array(100, 100, wavelength / 2, wavelength / 2, wavelength, allow_even=True)
    plan = partition(geometry, 1, 1)
    grid = build_polar_grid((1.0, 5.0))
    assert dictionary_bytes(geometry, grid) == 16 * 10_000 * grid.size
    builder = mocker.patch("aple_core.baselines._grid_channels")
    snapshot = Snapshot(y=np.ones(geometry.n_antennas, dtype=complex), plan=plan)
    with pytest.raises(DictionaryBudgetError, match="GiB"):
        omp_polar(snapshot, geometry, grid)
    builder.assert_not_called()


def test_omp_budget_error_is_memory_error(small_array, snapshot_of, user):
    geometry, plan = small_array
    grid = local_polar_grid(user, COARSE)
    with pytest.raises(MemoryError):
        omp_polar(snapshot_of(geometry, plan, user), geometry, grid, budget_bytes=1024)


@pytest.mark.slow
def test_omp_noiseless_error_is_set_by_grid_cell(fig3_array, snapshot_of):
    geometry, plan = fig3_array
    config = GridConfig()
    rng = np.random.default_rng(11)
    err2, pnorm2 = [], []
    for _ in range(10):
        direction = polar_to_cartesian(1.0, rng.uniform(0, 2 * np.pi), rng.uniform(0, np.pi / 6))
        p_user = 2.0 * direction
        snapshot = snapshot_of(geometry, plan, p_user)
        grid = local_polar_grid(p_user, config, rng)
        p_hat = omp_polar(snapshot, geometry, grid)
        np.testing.assert_array_equal(p_hat, mle_grid_oracle(snapshot, geometry, grid))
        err2.append(np.sum((p_hat - p_user) ** 2))
        pnorm2.append(np.sum(p_user**2))
    # a 0.1 m range cell at 2 m bounds the noiseless error near -32 dB
    assert 10 * np.log10(np.mean(err2) / np.mean(pnorm2)) <= -30.0
