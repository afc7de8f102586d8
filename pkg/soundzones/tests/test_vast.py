import numpy
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ..acoustics.sicer import sicer_grid
from ..control.vast import (
    CorrelationSet,
    DesignConfig,
    DimensionMismatch,
    GridMismatch,
    IndexOutOfRange,
    InvalidDesignConfig,
    RankTooLarge,
    SingularDenominator,
    convolution_matrix,
    correlations,
    cost,
    design,
    design_sweep,
    desired_signal,
    desired_signals,
    gevd,
    stack_zone_matrix,
    vast_filter,
    vast_weights,
)
from ..structures.ir import IrGrid, Zone


def _pencil(r_b_matrix, r_d_matrix, r_b_vector=None, sigma_d_sq=1.0):
    size = len(r_b_matrix)
    if r_b_vector is None:
        r_b_vector = numpy.zeros(size)
    return CorrelationSet(
        r_b_matrix=numpy.asarray(r_b_matrix, dtype=float),
        r_d_matrix=numpy.asarray(r_d_matrix, dtype=float),
        r_b_vector=numpy.asarray(r_b_vector, dtype=float),
        sigma_d_sq=sigma_d_sq,
        dims=(1, size, 1, 1, 1),
    )


@pytest.fixture
def random_pair(make_grid):
    def make(seed=0, K=3, L=2, N=20):
        bright = make_grid(Zone.bright, K=K, L=L, N=N, seed=seed)
        dark = make_grid(Zone.dark, K=K + 1, L=L, N=N, seed=seed + 100)
        return bright, dark

    return make


def test_convolution_matrix_examples():
    numpy.testing.assert_array_equal(
        convolution_matrix([1.0, 2.0], 2), [[1, 0], [2, 1], [0, 2]]
    )
    numpy.testing.assert_array_equal(convolution_matrix([1.0], 3), numpy.eye(3))


@settings(deadline=None)
@given(
    arrays(float, st.integers(1, 12), elements=st.floats(-10, 10)),
    arrays(float, st.integers(1, 8), elements=st.floats(-10, 10)),
)
def test_convolution_matrix_matches_convolve(h, w):
    numpy.testing.assert_allclose(
        convolution_matrix(h, len(w)) @ w, numpy.convolve(h, w), atol=1e-9
    )


def test_convolution_matrix_rejects_empty():
    with pytest.raises(DimensionMismatch):
        convolution_matrix([], 3)


def test_stacked_matrix_is_sum_of_convolutions(make_grid):
    grid = make_grid(K=2, L=3, N=10)
    J = 4
    w = numpy.random.default_rng(1).standard_normal((3, J))
    y = (stack_zone_matrix(grid, J) @ w.ravel()).reshape(2, 10 + J - 1)
    for k in range(2):
        expected = sum(
            numpy.convolve(grid.irs[k][l].samples, w[l]) for l in range(3)  # noqa: E741
        )
        numpy.testing.assert_allclose(y[k], expected, atol=1e-12)


def test_desired_signal_delay(make_grid):
    grid = make_grid(K=2, L=3, N=10)
    plain = desired_signals(grid, DesignConfig(filter_len_j=4, virtual_source_index=2))
    assert plain.shape == (2, 13)
    numpy.testing.assert_array_equal(plain[:, :10], grid.to_array()[:, 1, :])
    assert not plain[:, 10:].any()
    delayed = desired_signals(
        grid, DesignConfig(filter_len_j=4, virtual_source_index=2, modeling_delay=5)
    )
    numpy.testing.assert_array_equal(delayed[:, 5:], plain[:, :8])
    assert not delayed[:, :5].any()
    d = desired_signal(grid, DesignConfig(filter_len_j=4, virtual_source_index=2))
    assert d @ d == pytest.approx(numpy.sum(grid.to_array()[:, 1, :] ** 2))


@pytest.mark.parametrize("delay", [0, 3, 9, 10, 20])
def test_desired_signal_pads_short_responses(make_grid, delay):
    # The response is shorter than N + J - 1 whenever J > 1.
    grid = make_grid(K=1, L=1, N=8)
    d = desired_signals(grid, DesignConfig(filter_len_j=3, modeling_delay=delay))
    assert d.shape == (1, 10)
    h = grid.to_array()[0, 0]
    expected = numpy.zeros(10)
    seg = h[: max(0, 10 - delay)]
    expected[delay : delay + len(seg)] = seg
    numpy.testing.assert_array_equal(d[0], expected)


def test_desired_signal_rejects_index(make_grid):
    with pytest.raises(IndexOutOfRange):
        desired_signal(make_grid(L=2), DesignConfig(filter_len_j=4, virtual_source_index=3))


@pytest.mark.parametrize(
    "kwargs",
    [{"filter_len_j": 0}, {"mu": -1.0}, {"rank_v": 0}, {"modeling_delay": -1}],
)
def test_invalid_design_config(kwargs):
    values = {"filter_len_j": 4}
    values.update(kwargs)
    with pytest.raises(InvalidDesignConfig):
        DesignConfig(**values)


def test_delta_correlations():
    mic, speaker = [[0, 0, 0]], [[1, 1, 1]]
    delta = IrGrid.from_array(Zone.bright, numpy.ones((1, 1, 1)), 8000, 343, mic, speaker)
    silent = IrGrid.from_array(Zone.dark, numpy.zeros((1, 1, 1)), 8000, 343, mic, speaker)
    corr = correlations(delta, silent, DesignConfig(filter_len_j=2))
    numpy.testing.assert_allclose(corr.r_b_matrix, numpy.eye(2), atol=1e-15)
    assert not corr.r_d_matrix.any()
    basis = gevd(corr, 2)
    assert basis.regularization_used == 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_blockwise_matches_dense(random_pair, seed):
    bright, dark = random_pair(seed)
    cfg = DesignConfig(filter_len_j=5, virtual_source_index=1, modeling_delay=3)
    blockwise = correlations(bright, dark, cfg)
    dense = correlations(bright, dark, cfg, method="dense")
    for name in ("r_b_matrix", "r_d_matrix", "r_b_vector"):
        a, b = getattr(blockwise, name), getattr(dense, name)
        assert numpy.max(numpy.abs(a - b)) <= 1e-10 * numpy.max(numpy.abs(b))
    assert blockwise.sigma_d_sq == pytest.approx(dense.sigma_d_sq)
    assert blockwise.dims == (2, 5, 3, 4, 20)
    numpy.testing.assert_array_equal(blockwise.r_b_matrix, blockwise.r_b_matrix.T)


def test_grid_mismatch(make_grid):
    with pytest.raises(GridMismatch):
        correlations(
            make_grid(N=20), make_grid(Zone.dark, N=21), DesignConfig(filter_len_j=3)
        )
    with pytest.raises(GridMismatch):
        correlations(
            make_grid(L=2), make_grid(Zone.dark, L=3), DesignConfig(filter_len_j=3)
        )


def test_gevd_diagonal_example():
    basis = gevd(_pencil(numpy.diag([1.0, 4.0]), numpy.eye(2)), 2)
    numpy.testing.assert_allclose(basis.eigenvalues, [4.0, 1.0], rtol=1e-9)
    numpy.testing.assert_allclose(basis.eigenvectors, [[0, 1], [1, 0]], atol=1e-9)


def test_gevd_identity_pencil():
    basis = gevd(_pencil(numpy.eye(3), numpy.eye(3)), 2)
    numpy.testing.assert_allclose(basis.eigenvalues, [1.0, 1.0], rtol=1e-9)
    assert basis.rank == 2


def test_gevd_matches_dense_oracle():
    rng = numpy.random.default_rng(2)
    A = rng.standard_normal((12, 12))
    B = rng.standard_normal((12, 12))
    R_b = A @ A.T
    R_d = B @ B.T + 0.1 * numpy.eye(12)
    corr = _pencil(R_b, R_d)
    basis = gevd(corr, 12)
    delta = basis.regularization_used
    expected = scipy.linalg.eigh(R_b, R_d + delta * numpy.eye(12), eigvals_only=True)[::-1]
    numpy.testing.assert_allclose(basis.eigenvalues, expected, rtol=1e-8)
    assert numpy.all(numpy.diff(basis.eigenvalues) <= 0)
    U = basis.eigenvectors
    pivots = numpy.argmax(numpy.abs(U), axis=0)
    assert numpy.all(U[pivots, numpy.arange(12)] > 0)


def test_gevd_rank_bounds():
    corr = _pencil(numpy.eye(2), numpy.eye(2))
    with pytest.raises(RankTooLarge):
        gevd(corr, 3)
    with pytest.raises(RankTooLarge):
        gevd(corr, 0)


def test_joint_diagonalization_at_desk_scale(desk_grids):
    bright, dark = desk_grids
    corr = correlations(bright, dark, DesignConfig(filter_len_j=128, virtual_source_index=2))
    V = corr.size
    basis = gevd(corr, V)
    U = basis.eigenvectors
    R_d_reg = corr.r_d_matrix + basis.regularization_used * numpy.eye(V)
    assert numpy.linalg.norm(U.T @ R_d_reg @ U - numpy.eye(V)) <= 1e-8 * numpy.sqrt(V)
    # UᵀR_bU = Λ, whose scale is set by the largest eigenvalue.
    off_diagonal = U.T @ corr.r_b_matrix @ U - numpy.diag(basis.eigenvalues)
    scale = max(numpy.linalg.norm(corr.r_b_matrix), numpy.max(numpy.abs(basis.eigenvalues)))
    assert numpy.linalg.norm(off_diagonal) <= 1e-8 * scale


def test_vast_diagonal_example():
    corr = _pencil(numpy.diag([4.0, 1.0]), numpy.eye(2), r_b_vector=[1.0, 0.0])
    basis = gevd(corr, 2)
    bank = vast_filter(corr, basis, DesignConfig(filter_len_j=2, mu=1.0, rank_v=1))
    numpy.testing.assert_allclose(bank.w, [0.2, 0.0], atol=1e-9)
    assert bank.provenance["rank_v"] == 1
    assert cost(corr, bank, 1.0) == pytest.approx(1.0 - 0.2, abs=1e-9)


def test_zero_target_gives_zero_filter():
    corr = _pencil(numpy.diag([4.0, 1.0]), numpy.eye(2))
    basis = gevd(corr, 2)
    for v in (1, 2):
        assert not vast_weights(corr, basis, v, 0.5).any()


def test_cost_examples():
    corr = _pencil(numpy.diag([4.0, 1.0]), numpy.eye(2), r_b_vector=[1.0, 0.0], sigma_d_sq=3.0)
    assert cost(corr, numpy.zeros(2), 1.0) == 3.0
    assert cost(corr, [0.2, 0.0], 1.0) == pytest.approx(3.0 - 0.2)
    with pytest.raises(DimensionMismatch):
        cost(corr, numpy.zeros(3), 1.0)


def test_singular_denominator():
    corr = _pencil(numpy.diag([1.0, 0.0]), numpy.eye(2), r_b_vector=[1.0, 1.0])
    basis = gevd(corr, 2)
    with pytest.raises(SingularDenominator):
        vast_weights(corr, basis, 2, 0.0)
    vast_weights(corr, basis, 1, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_full_rank_is_regularized_solve(random_pair, seed):
    bright, dark = random_pair(seed)
    cfg = DesignConfig(filter_len_j=6, mu=1.0, virtual_source_index=2)
    corr = correlations(bright, dark, cfg)
    basis = gevd(corr, corr.size)
    w = vast_weights(corr, basis, corr.size, cfg.mu)
    R_d_reg = corr.r_d_matrix + basis.regularization_used * numpy.eye(corr.size)
    expected = numpy.linalg.solve(corr.r_b_matrix + cfg.mu * R_d_reg, corr.r_b_vector)
    assert numpy.linalg.norm(w - expected) <= 1e-6 * numpy.linalg.norm(expected)


def test_cost_decreases_with_rank(random_pair):
    bright, dark = random_pair(4)
    cfg = DesignConfig(filter_len_j=5, mu=1.0)
    corr = correlations(bright, dark, cfg)
    basis = gevd(corr, corr.size)
    delta = basis.regularization_used
    costs = []
    for v in range(1, corr.size + 1):
        w = vast_weights(corr, basis, v, cfg.mu)
        costs.append(cost(corr, w, cfg.mu, regularization=delta))
        U = basis.eigenvectors[:, :v]
        closed_form = corr.sigma_d_sq - numpy.sum(
            (U.T @ corr.r_b_vector) ** 2 / (basis.eigenvalues[:v] + cfg.mu)
        )
        assert costs[-1] == pytest.approx(closed_form, rel=1e-8, abs=1e-10 * corr.sigma_d_sq)
    assert numpy.all(numpy.diff(costs) <= 1e-10 * corr.sigma_d_sq)


def test_bright_zone_scaling(random_pair):
    bright, dark = random_pair(6)
    alpha = 2.0
    louder = bright.replace(bright.to_array() * alpha, bright.sound_speed_mps, {})
    V = 2 * 5
    w = design(bright, dark, DesignConfig(filter_len_j=5, mu=0.01, rank_v=V)).w
    w_loud = design(louder, dark, DesignConfig(filter_len_j=5, mu=0.01 * alpha ** 2, rank_v=V)).w
    numpy.testing.assert_allclose(
        w_loud / numpy.linalg.norm(w_loud), w / numpy.linalg.norm(w), atol=1e-6
    )


def test_design_sweep_matches_single_designs(random_pair):
    bright, dark = random_pair(8)
    cfg = DesignConfig(filter_len_j=4, mu=1.0)
    banks = design_sweep(bright, dark, cfg, [3, 1, 8, 3])
    assert sorted(banks) == [1, 3, 8]
    for rank, bank in banks.items():
        single = design(
            bright, dark, DesignConfig(filter_len_j=4, mu=1.0, rank_v=rank)
        )
        numpy.testing.assert_allclose(bank.w, single.w, rtol=1e-8, atol=1e-12)
        assert bank.provenance["rank_v"] == rank


def test_design_rank_too_large(random_pair):
    bright, dark = random_pair(0)
    with pytest.raises(RankTooLarge):
        design(bright, dark, DesignConfig(filter_len_j=2, rank_v=5))


def test_desk_design_and_correction(desk_grids):
    bright, dark = desk_grids
    cfg = DesignConfig(filter_len_j=128, rank_v=1, virtual_source_index=2)
    plain = design(bright, dark, cfg)
    assert plain.dims == (4, 128)
    assert numpy.all(numpy.isfinite(plain.w))
    assert numpy.linalg.norm(plain.w) > 0
    assert plain.provenance["corrected"] is False
    corrected = design(sicer_grid(bright, 333.0), sicer_grid(dark, 333.0), cfg)
    assert corrected.provenance["corrected"] is True
    assert corrected.provenance["grids"]["bright"]["sicer"]["c_new_mps"] == 333.0
    assert numpy.linalg.norm(corrected.w - plain.w) > 0
