"""
Evaluation of a control filter against (true) zone impulse responses.

Acoustic contrast (AC) compares mean energy per microphone in the bright and
dark zones; normalized signal distortion power (nSDP) compares the bright
zone signal with the desired one. Both are reported in dB, in the time domain
over whole signals and in the frequency domain per DFT bin.
"""
from dataclasses import dataclass

import numpy
import pandas
import scipy.fft
import scipy.signal

from ..structures.ir import validate_grid
from ..utils import NumericalFailure, next_power_of_two
from .vast import DesignConfig, DimensionMismatch, desired_signals


# dB values written for ±inf ratios.
SENTINEL_DB = 300.0


class ZeroDenominator(NumericalFailure):
    pass


def to_db(ratio):
    "10·log10 of a power ratio; 0 → −inf, inf → +inf."
    with numpy.errstate(divide="ignore"):
        return 10 * numpy.log10(ratio)


def encode_db(value):
    "Clamp ±inf to the ±300 dB sentinels so reports stay numeric."
    return numpy.clip(value, -SENTINEL_DB, SENTINEL_DB)


def delta_excitation():
    return numpy.ones(1)


def reproduce_zone(grid, filters, excitation=None):
    """
    Signals at each microphone, shape (K, N+J−1) or, with an excitation of
    length E, (K, N+J+E−2): y_k = Σ_l h_{k,l} * w_l, then convolved with the
    excitation.
    """
    validate_grid(grid)
    if filters.n_speakers != grid.n_speakers:
        raise DimensionMismatch(
            f"Filter bank drives {filters.n_speakers} loudspeakers; the grid has "
            f"{grid.n_speakers}."
        )
    h = grid.to_array()
    w = filters.per_speaker()
    y = scipy.signal.fftconvolve(h, w[numpy.newaxis, :, :], axes=-1).sum(axis=1)
    return apply_excitation(y, excitation)


def apply_excitation(signals, excitation=None):
    "Convolve each row with the excitation; None means the Kronecker delta."
    if excitation is None:
        return signals
    excitation = numpy.asarray(excitation, dtype=numpy.float64)
    return scipy.signal.fftconvolve(signals, excitation[numpy.newaxis, :], axes=-1)


def _ratio(numerator, denominator):
    """
    numerator/denominator with the conventions: num = 0 → 0 (−inf dB),
    den = 0 < num → +inf.
    """
    numerator = numpy.asarray(numerator, dtype=numpy.float64)
    denominator = numpy.asarray(denominator, dtype=numpy.float64)
    with numpy.errstate(divide="ignore", invalid="ignore"):
        ratio = numerator / denominator
    ratio = numpy.where(numerator == 0, 0.0, ratio)
    return numpy.where((denominator == 0) & (numerator > 0), numpy.inf, ratio)


def td_metrics(y_bz, y_dz, d):
    """
    (TD AC, TD nSDP) in dB.

    AC = K_d‖y_bz‖² / (K_b‖y_dz‖²); a silent dark zone gives +inf and a
    silent bright zone −inf, both zones silent included, as fd_metrics does
    per bin.
    nSDP = ‖d − y_bz‖² / ‖d‖²; perfect reproduction gives −inf.
    """
    y_bz = numpy.atleast_2d(y_bz)
    y_dz = numpy.atleast_2d(y_dz)
    d = numpy.asarray(d, dtype=numpy.float64)
    if d.size != y_bz.size:
        raise DimensionMismatch(
            f"The desired signal has {d.size} samples; the bright zone has {y_bz.size}."
        )
    d = d.reshape(y_bz.shape)
    K_b, K_d = len(y_bz), len(y_dz)
    bright_energy = float(numpy.sum(y_bz ** 2))
    dark_energy = float(numpy.sum(y_dz ** 2))
    desired_energy = float(numpy.sum(d ** 2))
    if desired_energy == 0:
        raise ZeroDenominator("The desired signal is all zeros; nSDP is undefined.")
    ac = _ratio(K_d * bright_energy, K_b * dark_energy)
    nsdp = _ratio(float(numpy.sum((d - y_bz) ** 2)), desired_energy)
    return float(to_db(ac)), float(to_db(nsdp))


def fd_metrics(y_bz, y_dz, d, fft_len=None):
    """
    Per-bin (FD AC, FD nSDP) in dB for bins 0 .. fft_len/2.

    Inputs are per-microphone arrays (K, T). A bin whose numerator is zero
    reports −inf; a zero denominator under a nonzero numerator reports +inf.
    """
    y_bz = numpy.atleast_2d(y_bz)
    y_dz = numpy.atleast_2d(y_dz)
    d = numpy.atleast_2d(d)
    if d.shape != y_bz.shape:
        raise DimensionMismatch(f"d has shape {d.shape}, y_bz has shape {y_bz.shape}.")
    length = max(y_bz.shape[-1], y_dz.shape[-1])
    if fft_len is None:
        fft_len = next_power_of_two(length)
    if fft_len < length:
        raise DimensionMismatch(f"fft_len={fft_len} is shorter than the signals ({length}).")
    K_b, K_d = len(y_bz), len(y_dz)
    Y_bz = scipy.fft.rfft(y_bz, n=fft_len, axis=-1)
    Y_dz = scipy.fft.rfft(y_dz, n=fft_len, axis=-1)
    D = scipy.fft.rfft(d, n=fft_len, axis=-1)
    bright = numpy.sum(numpy.abs(Y_bz) ** 2, axis=0)
    dark = numpy.sum(numpy.abs(Y_dz) ** 2, axis=0)
    error = numpy.sum(numpy.abs(Y_bz - D) ** 2, axis=0)
    desired = numpy.sum(numpy.abs(D) ** 2, axis=0)
    return to_db(_ratio(K_d * bright, K_b * dark)), to_db(_ratio(error, desired))


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    td_ac_db: float
    td_nsdp_db: float
    fd_ac_db: numpy.ndarray
    fd_nsdp_db: numpy.ndarray
    fft_len: int
    freqs_hz: numpy.ndarray

    def to_frame(self):
        "Long-format table with columns metric, domain, freq_hz, value_db."
        n_bins = len(self.freqs_hz)
        frame = pandas.DataFrame(
            {
                "metric": ["ac", "nsdp"] + ["ac"] * n_bins + ["nsdp"] * n_bins,
                "domain": ["td", "td"] + ["fd"] * (2 * n_bins),
                "freq_hz": numpy.concatenate(
                    [[numpy.nan, numpy.nan], self.freqs_hz, self.freqs_hz]
                ),
                "value_db": numpy.concatenate(
                    [[self.td_ac_db, self.td_nsdp_db], self.fd_ac_db, self.fd_nsdp_db]
                ),
            }
        )
        frame["value_db"] = encode_db(frame["value_db"].to_numpy())
        return frame


def evaluate(bright_true, dark_true, filters, excitation=None, fft_len=None):
    """
    Drive the true IRs with a filter bank and compute all four metrics.

    The desired signal is rebuilt from the true bright-zone IRs using the
    virtual source and modeling delay recorded in the filter's provenance,
    and the excitation is applied to it exactly as to the zone signals.
    """
    provenance = filters.provenance
    cfg = DesignConfig(
        filter_len_j=filters.filter_len,
        mu=provenance.get("mu", 1.0),
        rank_v=1,
        virtual_source_index=provenance.get("virtual_source_index", 1),
        modeling_delay=provenance.get("modeling_delay", 0),
    )
    y_bz = reproduce_zone(bright_true, filters, excitation)
    y_dz = reproduce_zone(dark_true, filters, excitation)
    d = apply_excitation(desired_signals(bright_true, cfg), excitation)
    td_ac, td_nsdp = td_metrics(y_bz, y_dz, d)
    if fft_len is None:
        fft_len = next_power_of_two(y_bz.shape[-1])
    fd_ac, fd_nsdp = fd_metrics(y_bz, y_dz, d, fft_len)
    return EvaluationReport(
        td_ac_db=td_ac,
        td_nsdp_db=td_nsdp,
        fd_ac_db=fd_ac,
        fd_nsdp_db=fd_nsdp,
        fft_len=fft_len,
        freqs_hz=scipy.fft.rfftfreq(fft_len, d=1.0 / bright_true.sample_rate_hz),
    )
