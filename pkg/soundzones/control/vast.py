"""
Time-domain sound zone control with variable span trade-off (VAST) filters.

Each loudspeaker l drives a length-J FIR filter w_l. For a Kronecker-delta
input the signal at microphone k is Σ_l h_{k,l} * w_l, i.e. H^(C) w with H^(C)
stacking the (N+J−1)×J convolution matrices of a zone. The cost

    ζ(w) = wᵀR_b w − 2 wᵀr_b + σ_d² + μ wᵀR_d w

is minimized inside the span of the V leading generalized eigenvectors of
(R_b, R_d): rank 1 is acoustic contrast control, rank L·J pressure matching.
"""
from dataclasses import dataclass
import logging
from typing import Tuple

import numpy
import scipy.fft
import scipy.linalg
import scipy.signal

from ..structures.filters import ControlFilterBank
from ..structures.ir import validate_grid
from ..utils import InvalidInput, NumericalFailure


logger = logging.getLogger(__name__)

REGULARIZATION_EPSILON = 1e-10
DENOMINATOR_TOLERANCE = 1e-14


class GridMismatch(InvalidInput):
    pass


class IndexOutOfRange(InvalidInput):
    pass


class RankTooLarge(InvalidInput):
    pass


class DimensionMismatch(InvalidInput):
    pass


class InvalidDesignConfig(InvalidInput):
    pass


class DecompositionFailure(NumericalFailure):
    pass


class SingularDenominator(NumericalFailure):
    pass


@dataclass(frozen=True)
class DesignConfig:
    filter_len_j: int
    mu: float = 1.0
    rank_v: int = 1
    # 1-based, as in "the 8th loudspeaker".
    virtual_source_index: int = 1
    modeling_delay: int = 0

    def __post_init__(self):
        if self.filter_len_j < 1:
            raise InvalidDesignConfig(f"filter_len_j must be >= 1, not {self.filter_len_j}")
        if self.mu < 0:
            raise InvalidDesignConfig(f"mu must be >= 0, not {self.mu}")
        if self.rank_v < 1:
            raise InvalidDesignConfig(f"rank_v must be >= 1, not {self.rank_v}")
        if self.modeling_delay < 0:
            raise InvalidDesignConfig(f"modeling_delay must be >= 0, not {self.modeling_delay}")

    def check_against(self, n_speakers):
        "Validate the fields that depend on the grid's L."
        if not 1 <= self.virtual_source_index <= n_speakers:
            raise IndexOutOfRange(
                f"virtual_source_index={self.virtual_source_index} is outside [1, {n_speakers}]."
            )
        if self.rank_v > n_speakers * self.filter_len_j:
            raise RankTooLarge(
                f"rank_v={self.rank_v} exceeds L*J={n_speakers * self.filter_len_j}."
            )


@dataclass(frozen=True, eq=False)
class CorrelationSet:
    r_b_matrix: numpy.ndarray
    r_d_matrix: numpy.ndarray
    r_b_vector: numpy.ndarray
    sigma_d_sq: float
    # (L, J, K_b, K_d, N)
    dims: Tuple[int, int, int, int, int]

    @property
    def size(self):
        L, J = self.dims[:2]
        return L * J


@dataclass(frozen=True, eq=False)
class VastBasis:
    eigenvalues: numpy.ndarray
    eigenvectors: numpy.ndarray
    regularization_used: float

    @property
    def rank(self):
        return len(self.eigenvalues)


def convolution_matrix(h, j):
    "(N+J−1)×J Toeplitz matrix T with T @ w == numpy.convolve(h, w)."
    h = numpy.asarray(h, dtype=numpy.float64)
    if h.ndim != 1 or len(h) < 1 or j < 1:
        raise DimensionMismatch(f"Need a non-empty 1-D h and J >= 1, got {h.shape}, {j}.")
    column = numpy.concatenate([h, numpy.zeros(j - 1)])
    row = numpy.zeros(j)
    row[0] = h[0]
    return scipy.linalg.toeplitz(column, row)


def stack_zone_matrix(grid, j):
    "K(N+J−1)×LJ matrix with block (k, l) = convolution_matrix(h_{k,l}, J)."
    validate_grid(grid)
    return numpy.block(
        [[convolution_matrix(ir.samples, j) for ir in row] for row in grid.irs]
    )


def desired_signals(bright, cfg):
    """
    Per-microphone desired signals, shape (K_b, N+J−1): the virtual
    loudspeaker's IR delayed by modeling_delay and zero-padded.
    """
    validate_grid(bright)
    cfg.check_against(bright.n_speakers)
    N, J = bright.n_samples, cfg.filter_len_j
    length = N + J - 1
    out = numpy.zeros((bright.n_mics, length))
    delay = cfg.modeling_delay
    if delay < length:
        for k, row in enumerate(bright.irs):
            h = row[cfg.virtual_source_index - 1].samples
            seg = h[: length - delay]
            out[k, delay : delay + len(seg)] = seg
    return out


def desired_signal(bright, cfg):
    "The stacked desired signal d, length K_b(N+J−1)."
    return desired_signals(bright, cfg).ravel()


def _check_pair(bright, dark):
    validate_grid(bright)
    validate_grid(dark)
    for name in ("sample_rate_hz", "n_samples", "n_speakers"):
        if getattr(bright, name) != getattr(dark, name):
            raise GridMismatch(
                f"Bright and dark grids differ in {name}: "
                f"{getattr(bright, name)} vs {getattr(dark, name)}."
            )


def _block_correlation(grid, j):
    """
    Σ_k H_{k,l}ᵀ H_{k,l'} for every (l, l') without building H.

    The (i, i') entry of each block is the cross-correlation
    ρ_{l,l'}(i − i') = Σ_k Σ_n h_{k,l}(n) h_{k,l'}(n + i − i').
    """
    samples = grid.to_array()
    K, L, N = samples.shape
    nfft = scipy.fft.next_fast_len(max(2 * N - 1, N + j - 1))
    spectra = scipy.fft.rfft(samples, n=nfft, axis=-1)
    cross = numpy.einsum("kaf,kbf->abf", numpy.conj(spectra), spectra)
    rho = scipy.fft.irfft(cross, n=nfft, axis=-1)
    lags = numpy.arange(j)
    R = numpy.empty((L * j, L * j))
    for a in range(L):
        for b in range(L):
            # rho[a, b, τ] = Σ_k Σ_n h_a(n) h_b(n + τ); negative lags wrap.
            column = rho[a, b, lags]
            row = rho[a, b, (-lags) % nfft]
            R[a * j:(a + 1) * j, b * j:(b + 1) * j] = scipy.linalg.toeplitz(
                column, row
            )
    return R


def _symmetrize(matrix):
    return 0.5 * (matrix + matrix.T)


def correlations(bright, dark, cfg, method="blockwise"):
    """
    R_b = H_bᵀH_b, R_d = H_dᵀH_d, r_b = H_bᵀd and σ_d² = ‖d‖².

    method="dense" materializes the stacked matrices and is kept as the
    reference the blockwise path is tested against.
    """
    _check_pair(bright, dark)
    cfg.check_against(bright.n_speakers)
    J = cfg.filter_len_j
    d_per_mic = desired_signals(bright, cfg)
    if method == "dense":
        H_b = stack_zone_matrix(bright, J)
        H_d = stack_zone_matrix(dark, J)
        R_b = H_b.T @ H_b
        R_d = H_d.T @ H_d
        r_b = H_b.T @ d_per_mic.ravel()
    elif method == "blockwise":
        R_b = _block_correlation(bright, J)
        R_d = _block_correlation(dark, J)
        samples = bright.to_array()
        r_b = numpy.zeros(bright.n_speakers * J)
        for k in range(bright.n_mics):
            for l in range(bright.n_speakers):  # noqa: E741
                # (H_{k,l}ᵀ d_k)[i] = Σ_n h(n) d_k(n + i), i < J
                r_b[l * J:(l + 1) * J] += scipy.signal.correlate(
                    d_per_mic[k], samples[k, l], mode="valid", method="direct"
                )
    else:
        raise ValueError(f"method must be 'blockwise' or 'dense', not {method!r}")
    d = d_per_mic.ravel()
    return CorrelationSet(
        r_b_matrix=_symmetrize(R_b),
        r_d_matrix=_symmetrize(R_d),
        r_b_vector=r_b,
        sigma_d_sq=float(d @ d),
        dims=(bright.n_speakers, J, bright.n_mics, dark.n_mics, bright.n_samples),
    )


def regularization(corr, epsilon=REGULARIZATION_EPSILON):
    """
    δ = ε·trace(R_d)/(LJ) added to R_d's diagonal before the pencil solve.
    An all-zero R_d gets δ = ε.
    """
    mean_diagonal = numpy.trace(corr.r_d_matrix) / corr.size
    return epsilon * (mean_diagonal if mean_diagonal > 0 else 1.0)


def _fix_signs(vectors):
    "Flip each column so its largest-magnitude entry is positive."
    pivots = numpy.argmax(numpy.abs(vectors), axis=0)
    signs = numpy.sign(vectors[pivots, numpy.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def gevd(corr, v):
    """
    Leading v eigenpairs of the pencil (R_b, R_d + δI), descending.

    Symmetric-definite reduction: R_d + δI = C Cᵀ, solve the ordinary
    symmetric problem for C⁻¹ R_b C⁻ᵀ, then back-transform U = C⁻ᵀ Y. The
    columns satisfy Uᵀ(R_d + δI)U = I and UᵀR_bU = diag(λ).
    """
    size = corr.size
    if not 1 <= v <= size:
        raise RankTooLarge(f"Requested {v} eigenpairs of a pencil of size {size}.")
    delta = regularization(corr)
    R_d_reg = corr.r_d_matrix + delta * numpy.eye(size)
    try:
        C = scipy.linalg.cholesky(R_d_reg, lower=True)
        inner = scipy.linalg.solve_triangular(C, corr.r_b_matrix, lower=True)
        inner = scipy.linalg.solve_triangular(C, inner.T, lower=True)
        eigenvalues, Y = scipy.linalg.eigh(
            _symmetrize(inner), subset_by_index=[size - v, size - 1]
        )
        U = scipy.linalg.solve_triangular(C.T, Y, lower=False)
    except (numpy.linalg.LinAlgError, ValueError) as err:
        raise DecompositionFailure(f"Generalized eigendecomposition failed: {err}") from err
    if not (numpy.all(numpy.isfinite(eigenvalues)) and numpy.all(numpy.isfinite(U))):
        raise DecompositionFailure("Generalized eigendecomposition produced non-finite values.")
    # eigh is ascending; a stable sort on −λ keeps tied pairs in solver order.
    order = numpy.argsort(-eigenvalues, kind="stable")
    logger.debug("GEVD of size %d: kept %d pairs, delta=%.3e", size, v, delta)
    return VastBasis(
        eigenvalues=eigenvalues[order],
        eigenvectors=_fix_signs(U[:, order]),
        regularization_used=delta,
    )


def vast_weights(corr, basis, rank_v, mu):
    "w = Σ_{v<=V} (u_vᵀ r_b) / (λ_v + μ) u_v as a plain array."
    if rank_v > basis.rank:
        raise RankTooLarge(f"rank_v={rank_v} exceeds the {basis.rank} eigenpairs computed.")
    lam = basis.eigenvalues[:rank_v]
    U = basis.eigenvectors[:, :rank_v]
    denominators = lam + mu
    tolerance = DENOMINATOR_TOLERANCE * max(1.0, float(numpy.max(numpy.abs(lam))))
    if numpy.any(denominators <= tolerance):
        raise SingularDenominator(
            f"λ_v + μ <= {tolerance:.3e} for some v <= {rank_v}; increase mu."
        )
    return U @ ((U.T @ corr.r_b_vector) / denominators)


def vast_filter(corr, basis, cfg, provenance=None):
    L, J = corr.dims[:2]
    w = vast_weights(corr, basis, cfg.rank_v, cfg.mu)
    meta = {
        "rank_v": cfg.rank_v,
        "mu": cfg.mu,
        "virtual_source_index": cfg.virtual_source_index,
        "modeling_delay": cfg.modeling_delay,
        "corrected": False,
    }
    meta.update(provenance or {})
    return ControlFilterBank(w, n_speakers=L, filter_len=J, provenance=meta)


def cost(corr, w, mu, regularization=0.0):
    """
    ζ(w) = wᵀR_bw − 2wᵀr_b + σ_d² + μ wᵀ(R_d + δI)w.

    Pass the basis' regularization_used as δ to match the closed form
    σ_d² − Σ (u_vᵀr_b)²/(λ_v + μ) of a VAST solution exactly.
    """
    w = w.w if isinstance(w, ControlFilterBank) else numpy.asarray(w, dtype=numpy.float64)
    if w.shape != corr.r_b_vector.shape:
        raise DimensionMismatch(
            f"Filter of length {w.shape} does not match LJ={corr.r_b_vector.shape}."
        )
    dark_energy = w @ corr.r_d_matrix @ w + regularization * (w @ w)
    return float(
        w @ corr.r_b_matrix @ w - 2 * (w @ corr.r_b_vector) + corr.sigma_d_sq + mu * dark_energy
    )


def _grid_provenance(bright, dark):
    return {
        "corrected": bright.is_sicer_corrected or dark.is_sicer_corrected,
        "sound_speed_mps": bright.sound_speed_mps,
        "grids": {
            zone.zone.value: {
                "sound_speed_mps": zone.sound_speed_mps,
                "sicer": dict(zone.metadata.get("sicer", {})),
            }
            for zone in (bright, dark)
        },
    }


def design(bright, dark, cfg):
    "correlations → gevd(rank_v) → vast_filter."
    corr = correlations(bright, dark, cfg)
    basis = gevd(corr, cfg.rank_v)
    return vast_filter(corr, basis, cfg, provenance=_grid_provenance(bright, dark))


def design_sweep(bright, dark, cfg, ranks):
    """
    Filters for several ranks from a single decomposition.

    Returns {rank: ControlFilterBank}; cfg.rank_v is ignored.
    """
    ranks = sorted(set(int(rank) for rank in ranks))
    corr = correlations(bright, dark, cfg)
    basis = gevd(corr, ranks[-1])
    provenance = _grid_provenance(bright, dark)
    return {
        rank: vast_filter(
            corr,
            basis,
            DesignConfig(
                filter_len_j=cfg.filter_len_j,
                mu=cfg.mu,
                rank_v=rank,
                virtual_source_index=cfg.virtual_source_index,
                modeling_delay=cfg.modeling_delay,
            ),
            provenance=provenance,
        )
        for rank in ranks
    }
