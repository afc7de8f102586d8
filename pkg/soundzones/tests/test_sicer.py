import math

import numpy
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from ..acoustics.room import RoomSpec, simulate_zone
from ..acoustics.sicer import (
    InvalidSicerSpec,
    SicerSpec,
    antialias_prefilter,
    parse_antialias,
    sicer_apply,
    sicer_grid,
    sicer_matrix,
    sinc,
    sinc_kernel_row,
    truncated_sicer_matrix,
)
from ..structures.ir import ImpulseResponse, IrGrid, Zone


def _ir(samples, c=343.0):
    return ImpulseResponse(samples, 16000.0, c)


def _smooth_noise(n_len, seed, band=0.7):
    "Lowpassed, Hann-tapered noise: bandlimited with no edge discontinuities."
    rng = numpy.random.default_rng(seed)
    taps = scipy.signal.firwin(101, band)
    x = scipy.signal.convolve(rng.standard_normal(n_len), taps, mode="same")
    return x * numpy.hanning(n_len)


def test_sinc_exact_values():
    assert sinc(0.0) == 1.0
    assert sinc(1e-9) == 1.0
    assert numpy.all(sinc(numpy.array([-3.0, -1.0, 1.0, 2.0, 7.0])) == 0.0)
    assert sinc(0.5) == pytest.approx(2 / math.pi)


def test_identity_at_unit_beta():
    rng = numpy.random.default_rng(0)
    spec = SicerSpec(beta=1.0, output_len=256, antialias="off")
    for _ in range(20):
        h = _ir(rng.standard_normal(256))
        out = sicer_apply(h, spec)
        error = numpy.max(numpy.abs(out.samples - h.samples)) / numpy.max(numpy.abs(h.samples))
        assert error <= 1e-12
        assert out.sound_speed_mps == h.sound_speed_mps


def test_matrix_is_identity_at_unit_beta():
    assert numpy.array_equal(sicer_matrix(1.0, 64, 64), numpy.eye(64))


@pytest.mark.parametrize("beta", [0.97, 1.03, 1.2])
def test_matrix_columns_are_kernel_rows(beta):
    S = sicer_matrix(beta, 40, 50)
    assert S.shape == (40, 50)
    for m in (0, 7, 49):
        numpy.testing.assert_allclose(S[:, m], sinc_kernel_row(m, beta, 40), atol=1e-15)


@settings(deadline=None, max_examples=25)
@given(
    st.floats(min_value=0.8, max_value=1.25),
    st.floats(min_value=-10, max_value=10),
    st.floats(min_value=-10, max_value=10),
)
def test_linearity(beta, a, b):
    rng = numpy.random.default_rng(1)
    h1, h2 = rng.standard_normal((2, 48))
    spec = SicerSpec(beta=beta, output_len=48)
    combined = sicer_apply(_ir(a * h1 + b * h2), spec).samples
    separate = a * sicer_apply(_ir(h1), spec).samples + b * sicer_apply(_ir(h2), spec).samples
    scale = 1.0 + numpy.max(numpy.abs(combined))
    assert numpy.max(numpy.abs(combined - separate)) <= 1e-9 * scale


@pytest.fixture(scope="module")
def free_field():
    "Direct-path-only IRs from one speaker to two microphones."
    room = RoomSpec((10.0, 10.0, 10.0), 0.0, 16000.0, 343.0, 512)
    speakers = [[5.0, 5.0, 5.0]]
    mics = [[6.715, 5.0, 5.0], [5.0, 7.3, 5.4]]
    return room, speakers, mics


@pytest.mark.parametrize("c_new", [333.0, 353.0])
def test_correction_matches_simulation_at_new_speed(free_field, c_new):
    room, speakers, mics = free_field
    stale = simulate_zone(room, speakers, mics, Zone.bright)
    fresh = simulate_zone(room.with_sound_speed(c_new), speakers, mics, Zone.bright)
    corrected = sicer_grid(stale, c_new)
    assert corrected.sound_speed_mps == c_new
    # Compare in the band both responses share; SICER bandlimits by construction.
    taps = scipy.signal.firwin(129, 0.85)
    for k in range(2):
        a = corrected.irs[k][0].samples
        b = fresh.irs[k][0].samples
        assert abs(int(numpy.argmax(numpy.abs(a))) - int(numpy.argmax(numpy.abs(b)))) <= 1
        a = numpy.convolve(a, taps)
        b = numpy.convolve(b, taps)
        ncc = a @ b / (numpy.linalg.norm(a) * numpy.linalg.norm(b))
        assert ncc >= 0.99


def _dtft(h, freqs):
    "DTFT of h at freqs given in cycles per sample."
    n = numpy.arange(len(h))
    return numpy.exp(-2j * numpy.pi * numpy.outer(freqs, n)) @ h


@pytest.mark.parametrize("beta", [0.97, 1.03])
def test_spectrum_is_rescaled(beta):
    pulse = numpy.convolve(scipy.signal.firwin(101, 0.8), [1.0, 0.5])
    h = numpy.zeros(512)
    h[100:100 + len(pulse)] = pulse
    out = sicer_apply(_ir(h), SicerSpec(beta=beta, output_len=512)).samples
    freqs = numpy.linspace(0.0, 0.7 * 0.5, 200)
    corrected_db = 20 * numpy.log10(numpy.abs(_dtft(out, freqs)))
    expected_db = 20 * numpy.log10(numpy.abs(_dtft(h, beta * freqs)))
    assert numpy.max(numpy.abs(corrected_db - expected_db)) <= 1.0


def test_prefilter_skipped_when_stretching():
    h = _ir(numpy.ones(16))
    assert antialias_prefilter(h, 1.0) is h
    assert antialias_prefilter(h, 1.05) is h
    assert antialias_prefilter(h, 0.9, cutoff_fraction=1.0) is h


@pytest.mark.parametrize("beta", [0.5, 0.9])
def test_prefilter_removes_aliasing_band(beta):
    rng = numpy.random.default_rng(3)
    x = numpy.zeros(1024)
    x[312:712] = rng.standard_normal(400)
    filtered = antialias_prefilter(_ir(x), beta).samples
    power = numpy.abs(numpy.fft.rfft(filtered)) ** 2
    original = numpy.abs(numpy.fft.rfft(x)) ** 2
    normalized = numpy.fft.rfftfreq(1024) / 0.5
    stop = normalized >= beta
    # At least 60 dB down over the band that would alias.
    assert power[stop].sum() <= 1e-6 * original[stop].sum()
    # The passband is left alone.
    band = normalized <= 0.85 * beta
    numpy.testing.assert_allclose(power[band].sum(), original[band].sum(), rtol=1e-2)


def test_prefilter_keeps_passband_tone():
    n = numpy.arange(512)
    tone = numpy.zeros(1024)
    # 0.3 of Nyquist is 0.15 cycles per sample.
    tone[256:768] = numpy.hanning(512) * numpy.sin(2 * numpy.pi * 0.15 * n)
    filtered = antialias_prefilter(_ir(tone), 0.97).samples
    before = numpy.abs(numpy.fft.rfft(tone)).max()
    after = numpy.abs(numpy.fft.rfft(filtered)).max()
    assert abs(20 * numpy.log10(after / before)) <= 0.5


def test_unit_cutoff_is_identity():
    # A lowpass at Nyquist passes everything.
    h = _ir(_smooth_noise(128, seed=2))
    assert antialias_prefilter(h, 0.9, cutoff_fraction=1.0) is h
    for beta in (0.97, 1.03):
        plain = sicer_apply(h, SicerSpec(beta, 128, antialias="off")).samples
        unit = sicer_apply(h, SicerSpec(beta, 128, antialias=1.0)).samples
        numpy.testing.assert_array_equal(unit, plain)


def test_explicit_cutoff_filters_when_stretching():
    h = _ir(numpy.random.default_rng(4).standard_normal(256))
    assert antialias_prefilter(h, 1.2, cutoff_fraction=0.5) is not h


@pytest.mark.parametrize(
    "value, expected", [("auto", "auto"), ("OFF", "off"), ("0.5", 0.5), (1, 1.0)]
)
def test_parse_antialias(value, expected):
    assert parse_antialias(value) == expected


@pytest.mark.parametrize("value", ["sometimes", 0, 1.5, -0.1])
def test_parse_antialias_rejects(value):
    with pytest.raises(InvalidSicerSpec):
        parse_antialias(value)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"beta": 0.0, "output_len": 4},
        {"beta": math.inf, "output_len": 4},
        {"beta": 1.0, "output_len": 0},
        {"beta": 1.0, "output_len": 4, "method": "fast"},
        {"beta": 1.0, "output_len": 4, "half_width": 0},
    ],
)
def test_invalid_spec(kwargs):
    with pytest.raises(InvalidSicerSpec):
        SicerSpec(**kwargs)


@pytest.mark.parametrize("beta", [0.97, 1.03])
def test_truncated_kernel_close_to_dense(beta):
    h = _ir(_smooth_noise(256, seed=5))
    dense = sicer_apply(h, SicerSpec(beta, 256, antialias="off")).samples
    fast = sicer_apply(h, SicerSpec(beta, 256, antialias="off", method="truncated")).samples
    assert numpy.sum((fast - dense) ** 2) <= 1e-6 * numpy.sum(dense ** 2)


def test_truncated_matrix_is_sparse():
    S = truncated_sicer_matrix(1.03, 512, 512, half_width=8)
    assert S.nnz < 512 * 20


def test_grid_correction_records_provenance(make_grid):
    grid = make_grid(N=64)
    corrected = sicer_grid(grid, 333.0, output_len=70)
    assert corrected.is_sicer_corrected
    assert corrected.n_samples == 70
    assert corrected.sound_speed_mps == 333.0
    info = corrected.metadata["sicer"]
    assert info["c_old_mps"] == 343.0
    assert info["c_new_mps"] == 333.0
    assert info["beta"] == pytest.approx(343 / 333)
    assert info["antialias"] == "auto"


def test_grid_correction_matches_single_irs(make_grid):
    grid = make_grid(K=2, L=3, N=40)
    corrected = sicer_grid(grid, 353.0)
    spec = SicerSpec(343 / 353, 40)
    for k in range(2):
        for l in range(3):  # noqa: E741
            single = sicer_apply(grid.irs[k][l], spec).samples
            numpy.testing.assert_allclose(corrected.irs[k][l].samples, single, atol=1e-12)


def test_grid_identity_at_same_speed(make_grid):
    grid = make_grid()
    assert numpy.array_equal(sicer_grid(grid, 343.0).to_array(), grid.to_array())


def test_lost_tail_is_reported():
    h = _ir(numpy.ones(100))
    with pytest.warns(UserWarning, match="discards"):
        sicer_apply(h, SicerSpec(beta=1.1, output_len=100))
    grid = IrGrid.from_array(
        Zone.dark, numpy.ones((1, 1, 100)), 16000.0, 343.0, [[0, 0, 0]], [[1, 1, 1]]
    )
    with pytest.warns(UserWarning, match="discards"):
        sicer_grid(grid, 343.0 / 1.1)
