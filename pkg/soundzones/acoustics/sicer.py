"""
Correct impulse responses for a change in the speed of sound.

An IR h measured at c_old is reconstructed as a continuous-time signal by
sinc interpolation, compressed or stretched in time by β = c_old / c_new,
resampled at the original rate and scaled by 1/β:

    h'(m) = (1/β) Σ_n h(n) sinc(m/β − n),   m = 0 .. M−1

or h' = (1/β) Sᵀ h with S[n, m] = sinc(m/β − n). When β < 1 the compressed
signal would alias, so h is first lowpassed below β times the Nyquist rate.
"""
from dataclasses import dataclass
import logging
import math
from typing import Union
import warnings

import numpy
import scipy.signal
import scipy.sparse

from ..structures.ir import validate_grid
from ..utils import InvalidInput
from .atmo import scaling_factor


logger = logging.getLogger(__name__)

SINC_ZERO_TOLERANCE = 1e-8
DEFAULT_HALF_WIDTH = 64
KAISER_BETA = 8.6
# Fraction of the compressed band edge β·f_Nyquist used as the lowpass cutoff.
AUTO_CUTOFF_RATIO = 0.95
STOPBAND_ATTENUATION_DB = 70.0
# Discarded stretched tails holding more than this share of the energy
# (−40 dB) are reported.
TAIL_ENERGY_WARNING = 1e-4
# Extra output samples examined past β·N when measuring the discarded tail.
TAIL_GUARD = 32


class InvalidSicerSpec(InvalidInput):
    pass


def parse_antialias(value):
    """
    Normalize an anti-alias mode: "auto", "off", or an explicit cutoff given
    as a fraction of the Nyquist frequency in (0, 1].
    """
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("auto", "off"):
            return lowered
        try:
            value = float(lowered)
        except ValueError:
            raise InvalidSicerSpec(
                f"antialias must be 'auto', 'off' or a number in (0, 1], not {value!r}"
            ) from None
    fraction = float(value)
    if not 0 < fraction <= 1:
        raise InvalidSicerSpec(f"Explicit antialias cutoff {fraction} is outside (0, 1].")
    return fraction


@dataclass(frozen=True)
class SicerSpec:
    beta: float
    output_len: int
    antialias: Union[str, float] = "auto"
    method: str = "dense"
    half_width: int = DEFAULT_HALF_WIDTH

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidSicerSpec(f"beta must be finite and positive, not {self.beta}")
        if int(self.output_len) != self.output_len or self.output_len < 1:
            raise InvalidSicerSpec(f"output_len must be an integer >= 1, not {self.output_len}")
        if self.method not in ("dense", "truncated"):
            raise InvalidSicerSpec(f"method must be 'dense' or 'truncated', not {self.method!r}")
        if self.half_width < 1:
            raise InvalidSicerSpec(f"half_width must be >= 1, not {self.half_width}")
        object.__setattr__(self, "output_len", int(self.output_len))
        object.__setattr__(self, "antialias", parse_antialias(self.antialias))


def sinc(x):
    """
    Normalized sinc, sin(πx)/(πx).

    |x| < 1e-8 returns exactly 1 and nonzero integers return exactly 0, so the
    resampling matrix is exactly the identity when β = 1.
    """
    x = numpy.asarray(x, dtype=numpy.float64)
    out = numpy.empty_like(x)
    small = numpy.abs(x) < SINC_ZERO_TOLERANCE
    integer = (x == numpy.round(x)) & ~small
    general = ~(small | integer)
    out[small] = 1.0
    out[integer] = 0.0
    px = numpy.pi * x[general]
    out[general] = numpy.sin(px) / px
    return out


def sinc_kernel_row(m, beta, n_len):
    "The m-th column of S as a row: sinc(m/β − n) for n = 0 .. n_len−1."
    if n_len < 1 or not beta > 0:
        raise InvalidSicerSpec(f"Need n_len >= 1 and beta > 0, got {n_len}, {beta}.")
    return sinc(m / beta - numpy.arange(n_len))


def sicer_matrix(beta, n_len, output_len):
    "Dense N×M resampling matrix S with S[n, m] = sinc(m/β − n)."
    m = numpy.arange(output_len)
    n = numpy.arange(n_len)
    return sinc(m[numpy.newaxis, :] / beta - n[:, numpy.newaxis])


def truncated_sicer_matrix(beta, n_len, output_len, half_width=DEFAULT_HALF_WIDTH):
    """
    Sparse approximation of S: the sinc is Kaiser-windowed and cut off at
    |m/β − n| <= half_width.
    """
    m = numpy.arange(output_len)
    centers = m / beta
    offsets = numpy.arange(-half_width, half_width + 2)
    n = numpy.floor(centers)[:, numpy.newaxis].astype(numpy.int64) + offsets
    x = centers[:, numpy.newaxis] - n
    keep = (numpy.abs(x) <= half_width) & (n >= 0) & (n < n_len)
    x = x[keep]
    window = numpy.i0(KAISER_BETA * numpy.sqrt(1 - (x / half_width) ** 2)) / numpy.i0(
        KAISER_BETA
    )
    columns = numpy.broadcast_to(m[:, numpy.newaxis], keep.shape)[keep]
    return scipy.sparse.csr_matrix(
        (sinc(x) * window, (n[keep], columns)), shape=(n_len, output_len)
    )


def lowpass_taps(cutoff, transition_width, attenuation_db=STOPBAND_ATTENUATION_DB):
    """
    Odd-length Kaiser-window linear-phase lowpass.

    cutoff and transition_width are fractions of the Nyquist frequency; the
    stopband begins at cutoff + transition_width / 2.
    """
    numtaps, kaiser_beta = scipy.signal.kaiserord(attenuation_db, transition_width)
    numtaps |= 1
    return scipy.signal.firwin(numtaps, cutoff, window=("kaiser", kaiser_beta))


def _cutoff_for(beta, antialias):
    "Cutoff as a fraction of Nyquist, or None for no filtering."
    if antialias == "off":
        return None
    if antialias == "auto":
        if beta >= 1:
            return None
        return AUTO_CUTOFF_RATIO * beta
    # An explicit cutoff filters whatever β is; 1.0 is a lowpass at Nyquist.
    if antialias >= 1:
        return None
    return antialias


def _prefilter_rows(samples, cutoff):
    # Transition band ends exactly at cutoff / AUTO_CUTOFF_RATIO (β·Nyquist
    # in auto mode).
    stop_edge = min(cutoff / AUTO_CUTOFF_RATIO, 1.0)
    taps = lowpass_taps(cutoff, 2 * (stop_edge - cutoff))
    # Odd-length linear-phase taps with mode="same" are zero-phase.
    return numpy.stack(
        [scipy.signal.convolve(row, taps, mode="same") for row in samples]
    )


def antialias_prefilter(h, beta, cutoff_fraction=None):
    """
    Lowpass an IR ahead of compression.

    With cutoff_fraction None the cutoff is 0.95·β of Nyquist and β >= 1
    returns h itself untouched.
    """
    cutoff = _cutoff_for(beta, "auto" if cutoff_fraction is None else cutoff_fraction)
    if cutoff is None:
        return h
    filtered = _prefilter_rows(h.samples[numpy.newaxis, :], cutoff)[0]
    return h.with_samples(filtered, label=f"{h.label} lowpass({cutoff:.4f})")


def _resample_rows(samples, spec):
    """
    Apply (1/β) Sᵀ to each row of a (P, N) array. Returns the (P, M) output
    and, when β > 1, the share of each row's energy lost past M.
    """
    n_len = samples.shape[1]
    cutoff = _cutoff_for(spec.beta, spec.antialias)
    if cutoff is not None:
        samples = _prefilter_rows(samples, cutoff)
    natural_len = int(math.ceil(spec.beta * n_len)) + TAIL_GUARD
    if spec.method == "dense":
        S = sicer_matrix(spec.beta, n_len, spec.output_len)
    else:
        S = truncated_sicer_matrix(spec.beta, n_len, spec.output_len, spec.half_width)
    out = (1.0 / spec.beta) * numpy.asarray(S.T @ samples.T).T
    lost = numpy.zeros(len(samples))
    if spec.beta > 1 and natural_len > spec.output_len:
        m = numpy.arange(spec.output_len, natural_len)
        tail = (1.0 / spec.beta) * (
            samples @ sinc(
                m[numpy.newaxis, :] / spec.beta - numpy.arange(n_len)[:, numpy.newaxis]
            )
        )
        tail_energy = numpy.sum(tail ** 2, axis=1)
        total = tail_energy + numpy.sum(out ** 2, axis=1)
        with numpy.errstate(invalid="ignore", divide="ignore"):
            lost = numpy.where(total > 0, tail_energy / total, 0.0)
    return out, lost


def energy_ratio(h, h_corrected):
    "Energy of the corrected IR over the energy of the original."
    original = h.energy()
    return h_corrected.energy() / original if original > 0 else math.nan


def sicer_apply(h, spec):
    "Correct one ImpulseResponse. The output is valid at c_old / β."
    out, lost = _resample_rows(h.samples[numpy.newaxis, :], spec)
    if lost[0] > TAIL_ENERGY_WARNING:
        warnings.warn(
            f"Stretching {h.label!r} by beta={spec.beta:.6f} into {spec.output_len} "
            f"samples discards {10 * math.log10(lost[0]):.1f} dB of its energy. "
            "Increase the output length to keep the tail."
        )
    corrected = h.with_samples(
        out[0],
        sound_speed_mps=h.sound_speed_mps / spec.beta,
        label=f"{h.label} sicer(beta={spec.beta:.6f})",
    )
    logger.debug(
        "SICER %r beta=%.6f energy ratio %.6f", h.label, spec.beta, energy_ratio(h, corrected)
    )
    return corrected


def sicer_grid(
    grid,
    c_new,
    antialias="auto",
    output_len=None,
    method="dense",
    half_width=DEFAULT_HALF_WIDTH,
):
    """
    Correct every IR of a grid to sound speed c_new.

    S depends only on β, N and M, so it is built once and applied to all K·L
    IRs in one product; the result does not depend on how the work is split.
    """
    validate_grid(grid)
    beta = scaling_factor(grid.sound_speed_mps, c_new)
    spec = SicerSpec(
        beta=beta,
        output_len=grid.n_samples if output_len is None else output_len,
        antialias=antialias,
        method=method,
        half_width=half_width,
    )
    K, L, N = grid.n_mics, grid.n_speakers, grid.n_samples
    out, lost = _resample_rows(grid.to_array().reshape(K * L, N), spec)
    out = out.reshape(K, L, spec.output_len)
    lossy = lost > TAIL_ENERGY_WARNING
    if numpy.any(lossy):
        warnings.warn(
            f"Stretching by beta={beta:.6f} into {spec.output_len} samples discards "
            f"more than -40 dB of energy in {int(lossy.sum())} of {K * L} IRs "
            f"(worst {10 * math.log10(lost.max()):.1f} dB). "
            "Increase the output length to keep the tails."
        )
    metadata = dict(grid.metadata)
    metadata["sicer"] = {
        "c_old_mps": grid.sound_speed_mps,
        "c_new_mps": float(c_new),
        "beta": beta,
        "antialias": spec.antialias,
        "output_len": spec.output_len,
    }
    rows = []
    for k in range(K):
        row = []
        for l in range(L):  # noqa: E741
            try:
                row.append(
                    grid.irs[k][l].with_samples(
                        out[k, l],
                        sound_speed_mps=float(c_new),
                        label=f"{grid.irs[k][l].label} sicer(beta={beta:.6f})",
                    )
                )
            except InvalidInput as err:
                raise type(err)(f"SICER correction of IR (k={k}, l={l}) failed: {err}") from err
        rows.append(row)
    logger.info(
        "Corrected %d IRs of the %s zone from %.3f to %.3f m/s (beta=%.6f)",
        K * L,
        grid.zone.value,
        grid.sound_speed_mps,
        c_new,
        beta,
    )
    return validate_grid(
        type(grid)(grid.zone, rows, grid.mic_positions, grid.speaker_positions, metadata)
    )
