from dataclasses import dataclass, field
import enum
from typing import Any, Mapping, Tuple

import numpy

from ..utils import DictView, InvalidInput


class Zone(str, enum.Enum):
    bright = "bright"
    dark = "dark"


class InvalidImpulseResponse(InvalidInput):
    pass


class EmptyGrid(InvalidInput):
    pass


class MixedSampleRate(InvalidInput):
    pass


class MixedLength(InvalidInput):
    pass


class MixedSoundSpeed(InvalidInput):
    pass


class PositionCountMismatch(InvalidInput):
    pass


def _frozen_array(values, name):
    array = numpy.array(values, dtype=numpy.float64)
    if array.ndim != 1:
        raise InvalidImpulseResponse(f"{name} must be one-dimensional, not {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ImpulseResponse:
    """
    A sampled impulse response, valid at one sound speed.

    Samples are held as float64; the 32-bit representation only exists on disk.
    """

    samples: numpy.ndarray
    sample_rate_hz: float
    sound_speed_mps: float
    label: str = ""

    def __post_init__(self):
        samples = _frozen_array(self.samples, "samples")
        if samples.size < 1:
            raise InvalidImpulseResponse("An impulse response needs at least one sample.")
        if not numpy.all(numpy.isfinite(samples)):
            raise InvalidImpulseResponse(f"Non-finite samples in impulse response {self.label!r}.")
        if not self.sample_rate_hz > 0:
            raise InvalidImpulseResponse(
                f"sample_rate_hz must be positive, not {self.sample_rate_hz}"
            )
        if not self.sound_speed_mps > 0:
            raise InvalidImpulseResponse(
                f"sound_speed_mps must be positive, not {self.sound_speed_mps}"
            )
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "sound_speed_mps", float(self.sound_speed_mps))

    def __len__(self):
        return len(self.samples)

    def __repr__(self):
        return (
            f"{type(self).__name__}(n_samples={len(self)}, "
            f"sample_rate_hz={self.sample_rate_hz}, "
            f"sound_speed_mps={self.sound_speed_mps}, label={self.label!r})"
        )

    def energy(self):
        return float(numpy.dot(self.samples, self.samples))

    def with_samples(self, samples, sound_speed_mps=None, label=None):
        "Return a new ImpulseResponse sharing this one's sample rate."
        return type(self)(
            samples=samples,
            sample_rate_hz=self.sample_rate_hz,
            sound_speed_mps=self.sound_speed_mps if sound_speed_mps is None else sound_speed_mps,
            label=self.label if label is None else label,
        )


def _positions(values):
    array = numpy.array(values, dtype=numpy.float64).reshape(-1, 3)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class IrGrid:
    """
    The K×L impulse responses of one zone: irs[k][l] runs from loudspeaker l
    to microphone k.

    Construction does not validate; call ``validate_grid`` (the loaders and
    every processing step do).
    """

    zone: Zone
    irs: Tuple[Tuple[ImpulseResponse, ...], ...]
    mic_positions: numpy.ndarray
    speaker_positions: numpy.ndarray
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "zone", Zone(self.zone))
        object.__setattr__(self, "irs", tuple(tuple(row) for row in self.irs))
        object.__setattr__(self, "mic_positions", _positions(self.mic_positions))
        object.__setattr__(
            self, "speaker_positions", _positions(self.speaker_positions)
        )
        object.__setattr__(self, "metadata", DictView(dict(self.metadata)))

    def __repr__(self):
        return f"<{type(self).__name__} {self.zone.value} K={self.n_mics} L={self.n_speakers}>"

    @classmethod
    def from_array(
        cls,
        zone,
        samples,
        sample_rate_hz,
        sound_speed_mps,
        mic_positions,
        speaker_positions,
        metadata=None,
    ):
        "Build a grid from a (K, L, N) array of samples."
        samples = numpy.asarray(samples, dtype=numpy.float64)
        if samples.ndim != 3:
            raise InvalidInput(f"Expected a (K, L, N) array, not shape {samples.shape}")
        irs = [
            [
                ImpulseResponse(
                    samples[k, l],
                    sample_rate_hz,
                    sound_speed_mps,
                    label=f"{Zone(zone).value}:k={k},l={l}",
                )
                for l in range(samples.shape[1])  # noqa: E741
            ]
            for k in range(samples.shape[0])
        ]
        return cls(zone, irs, mic_positions, speaker_positions, metadata or {})

    @property
    def n_mics(self):
        return len(self.irs)

    @property
    def n_speakers(self):
        return len(self.irs[0]) if self.irs else 0

    @property
    def n_samples(self):
        return len(self.irs[0][0].samples)

    @property
    def sample_rate_hz(self):
        return self.irs[0][0].sample_rate_hz

    @property
    def sound_speed_mps(self):
        return self.irs[0][0].sound_speed_mps

    @property
    def is_sicer_corrected(self):
        return "sicer" in self.metadata

    def to_array(self):
        "Samples as a fresh (K, L, N) float64 array."
        return numpy.array(
            [[ir.samples for ir in row] for row in self.irs], dtype=numpy.float64
        )

    def replace(self, samples, sound_speed_mps, metadata):
        "A grid with the same geometry and new (K, L, N) samples."
        return type(self).from_array(
            self.zone,
            samples,
            self.sample_rate_hz,
            sound_speed_mps,
            self.mic_positions,
            self.speaker_positions,
            metadata,
        )


def validate_grid(grid):
    """
    Check every IrGrid invariant. Returns the grid, or raises the error naming
    the first violated invariant.
    """
    if grid.n_mics < 1 or grid.n_speakers < 1:
        raise EmptyGrid(
            f"A grid needs K >= 1 and L >= 1; got K={grid.n_mics}, L={grid.n_speakers}."
        )
    row_lengths = {len(row) for row in grid.irs}
    if len(row_lengths) != 1:
        raise EmptyGrid(f"Ragged grid: rows have {sorted(row_lengths)} loudspeakers.")
    if len(grid.mic_positions) != grid.n_mics:
        raise PositionCountMismatch(
            f"{len(grid.mic_positions)} mic positions given for K={grid.n_mics}."
        )
    if len(grid.speaker_positions) != grid.n_speakers:
        raise PositionCountMismatch(
            f"{len(grid.speaker_positions)} speaker positions given for L={grid.n_speakers}."
        )
    reference = grid.irs[0][0]
    for k, row in enumerate(grid.irs):
        for l, ir in enumerate(row):  # noqa: E741
            if ir.sample_rate_hz != reference.sample_rate_hz:
                raise MixedSampleRate(
                    f"IR (k={k}, l={l}) has sample_rate_hz={ir.sample_rate_hz}, "
                    f"expected {reference.sample_rate_hz}."
                )
            if len(ir) != len(reference):
                raise MixedLength(
                    f"IR (k={k}, l={l}) has N={len(ir)}, expected {len(reference)}."
                )
            if ir.sound_speed_mps != reference.sound_speed_mps:
                raise MixedSoundSpeed(
                    f"IR (k={k}, l={l}) has sound_speed_mps={ir.sound_speed_mps}, "
                    f"expected {reference.sound_speed_mps}."
                )
    return grid
