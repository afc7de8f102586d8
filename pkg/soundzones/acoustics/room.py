"""
Shoebox room impulse responses by the image-source method.

Every image source contributes r**order / (4π d) at a fractional delay of
d / c · f_s samples, rendered with an 81-tap Hann-windowed sinc lowpass cut
at KERNEL_CUTOFF of Nyquist. The kernel has unit peak, so a pulse landing on
a sample keeps its free-field amplitude exactly.

The reflection coefficient r is the same on all six walls. It is calibrated
so that the image lattice's own energy decay, fitted the way
schroeder_decay_time fits it, reaches −60 dB after rt60; rt60 = 0 means
anechoic.
"""
from dataclasses import dataclass
import functools
import logging
import math
from typing import Optional, Tuple

import numpy

from ..settings import compute
from ..structures.ir import IrGrid, Zone, validate_grid
from ..utils import InvalidInput


logger = logging.getLogger(__name__)

KERNEL_TAPS = 81
_HALF_SPAN = KERNEL_TAPS / 2
_TAP_OFFSETS = numpy.arange(-(KERNEL_TAPS // 2), KERNEL_TAPS // 2 + 1)
# Fraction of Nyquist passed by the rendering kernel.
KERNEL_CUTOFF = 0.8
# Directions averaged when calibrating the wall reflection coefficient.
DECAY_DIRECTIONS = 2048
_DECAY_STEPS = 4096
# Image sources rendered per pass.
RENDER_CHUNK = 4096
MIN_TRANSDUCER_DISTANCE = 0.01
SPEAKER_SPACING = 0.06
MIC_SPACING = 0.09
ARRAY_HEIGHT = 1.2


class InvalidRoom(InvalidInput):
    pass


class SourceOutsideRoom(InvalidInput):
    pass


class ReceiverOutsideRoom(InvalidInput):
    pass


def _points(values, name):
    array = numpy.array(values, dtype=numpy.float64).reshape(-1, 3)
    if len(array) < 1:
        raise InvalidRoom(f"At least one position is required for {name}.")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class RoomSpec:
    dimensions: Tuple[float, float, float]
    rt60_s: float
    sample_rate_hz: float
    sound_speed_mps: float
    n_samples: int
    # None selects auto_reflection_order(room).
    max_reflection_order: Optional[int] = None

    def __post_init__(self):
        dimensions = tuple(float(d) for d in self.dimensions)
        if len(dimensions) != 3 or min(dimensions) <= 0:
            raise InvalidRoom(f"Room dimensions must be three positive lengths, not {dimensions}.")
        if self.rt60_s < 0:
            raise InvalidRoom(f"rt60_s must be >= 0, not {self.rt60_s}.")
        if not self.sample_rate_hz > 0 or not self.sound_speed_mps > 0:
            raise InvalidRoom("sample_rate_hz and sound_speed_mps must be positive.")
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise InvalidRoom(f"n_samples must be an integer >= 1, not {self.n_samples}.")
        if self.max_reflection_order is not None and self.max_reflection_order < 0:
            raise InvalidRoom(
                f"max_reflection_order must be >= 0 or None, not {self.max_reflection_order}."
            )
        object.__setattr__(self, "dimensions", dimensions)
        object.__setattr__(self, "n_samples", int(self.n_samples))

    def with_sound_speed(self, sound_speed_mps):
        """
        The same room, walls included, at another speed of sound.

        Wall absorption is a property of the walls, so rt60 scales
        by c_old / c_new and the reflection coefficient is unchanged.
        """
        return type(self)(
            self.dimensions,
            self.rt60_s * self.sound_speed_mps / sound_speed_mps,
            self.sample_rate_hz,
            sound_speed_mps,
            self.n_samples,
            self.max_reflection_order,
        )

    def contains(self, point):
        point = numpy.asarray(point, dtype=numpy.float64)
        return bool(numpy.all(point > 0) and numpy.all(point < self.dimensions))


@dataclass(frozen=True, eq=False)
class ArraySpec:
    speaker_positions: numpy.ndarray
    bright_mic_positions: numpy.ndarray
    dark_mic_positions: numpy.ndarray

    def __post_init__(self):
        speakers = _points(self.speaker_positions, "speaker_positions")
        bright = _points(self.bright_mic_positions, "bright_mic_positions")
        dark = _points(self.dark_mic_positions, "dark_mic_positions")
        mics = numpy.concatenate([bright, dark])
        gaps = numpy.linalg.norm(mics[:, numpy.newaxis, :] - speakers[numpy.newaxis, :, :], axis=-1)
        if gaps.min() <= MIN_TRANSDUCER_DISTANCE:
            raise InvalidRoom(
                "A microphone lies within 1 cm of a loudspeaker; "
                "the free-field amplitude 1/(4πd) is unbounded there."
            )
        object.__setattr__(self, "speaker_positions", speakers)
        object.__setattr__(self, "bright_mic_positions", bright)
        object.__setattr__(self, "dark_mic_positions", dark)

    def mics(self, zone):
        if Zone(zone) is Zone.bright:
            return self.bright_mic_positions
        return self.dark_mic_positions


def _sphere_directions(count):
    "count near-uniform unit vectors (Fibonacci lattice)."
    n = numpy.arange(count) + 0.5
    z = 1 - 2 * n / count
    phi = math.pi * (1 + math.sqrt(5)) * n
    rho = numpy.sqrt(1 - z ** 2)
    return numpy.stack([rho * numpy.cos(phi), rho * numpy.sin(phi), z], axis=-1)


@functools.lru_cache(maxsize=64)
def unit_decay_distance(dimensions):
    """
    Travel distance (m) over which the image-source energy envelope of a room
    falls 60 dB when every wall reflection scales pressure by e^-1.

    Images fill space uniformly and spherical spreading cancels the growth of
    each shell, so the envelope at distance x is the direction average of
    exp(-2 x Σ|u_i|/L_i). It depends on x only through its product with
    -ln r, which makes the distance for any r equal to this value / -ln r.
    """
    rate = numpy.abs(_sphere_directions(DECAY_DIRECTIONS)) @ (
        1 / numpy.asarray(dimensions, dtype=numpy.float64)
    )
    # Long enough for the slowest direction to fall 140 dB.
    x = numpy.linspace(0.0, 7 * math.log(10) / rate.min(), _DECAY_STEPS)
    energy = numpy.exp(-2 * numpy.outer(x, rate)).mean(axis=1)
    return decay_span(energy, x[1] - x[0])


def reflection_coefficient(room):
    """
    Uniform wall pressure reflection coefficient r = exp(-D / (c T60)), where
    D is unit_decay_distance of the room. Depends on c and rt60 only through
    their product.
    """
    if room.rt60_s == 0:
        return 0.0
    travel = room.sound_speed_mps * room.rt60_s
    return math.exp(-unit_decay_distance(tuple(room.dimensions)) / travel)


def auto_reflection_order(room):
    return int(math.ceil(room.sound_speed_mps * room.rt60_s / min(room.dimensions))) + 1


def _axis_images(coordinate, length, max_order):
    "Image coordinates along one axis with their reflection counts."
    n = numpy.arange(-(max_order // 2) - 1, max_order // 2 + 2)
    coords, orders = [], []
    for q in (0, 1):
        coords.append((1 - 2 * q) * coordinate + 2 * n * length)
        orders.append(numpy.abs(n - q) + numpy.abs(n))
    coords = numpy.concatenate(coords)
    orders = numpy.concatenate(orders)
    keep = orders <= max_order
    return coords[keep], orders[keep]


def image_sources(source, room, max_order=None):
    """
    Positions (P, 3) and reflection orders (P,) of every image of source with
    at most max_order wall reflections, the direct path included.
    """
    if max_order is None:
        max_order = (
            room.max_reflection_order
            if room.max_reflection_order is not None
            else auto_reflection_order(room)
        )
    axes = [
        _axis_images(coordinate, length, max_order)
        for coordinate, length in zip(source, room.dimensions)
    ]
    (x, ox), (y, oy), (z, oz) = axes
    order = ox[:, None, None] + oy[None, :, None] + oz[None, None, :]
    keep = order <= max_order
    X, Y, Z = numpy.broadcast_arrays(
        x[:, None, None], y[None, :, None], z[None, None, :]
    )
    positions = numpy.stack([X[keep], Y[keep], Z[keep]], axis=-1)
    return positions, order[keep]


def render_impulse_response(distances, amplitudes, room):
    "Sum fractional-delay pulses into an n_samples-long response."
    n_len = room.n_samples
    delays = distances / room.sound_speed_mps * room.sample_rate_hz
    audible = (delays < n_len + _HALF_SPAN) & (amplitudes != 0)
    delays = delays[audible]
    amplitudes = amplitudes[audible]
    out = numpy.zeros(n_len)
    # Chunked so memory stays bounded for long, reverberant responses.
    for start in range(0, len(delays), RENDER_CHUNK):
        chunk = slice(start, start + RENDER_CHUNK)
        index = numpy.floor(delays[chunk]).astype(numpy.int64)[:, numpy.newaxis] + _TAP_OFFSETS
        x = index - delays[chunk, numpy.newaxis]
        window = numpy.where(
            numpy.abs(x) <= _HALF_SPAN,
            0.5 * (1 + numpy.cos(2 * numpy.pi * x / KERNEL_TAPS)),
            0.0,
        )
        taps = amplitudes[chunk, numpy.newaxis] * window * numpy.sinc(KERNEL_CUTOFF * x)
        valid = (index >= 0) & (index < n_len)
        out += numpy.bincount(index[valid], weights=taps[valid], minlength=n_len)
    return out


def simulate_pair(room, source, receiver, images=None):
    "One impulse response from source to receiver."
    r = reflection_coefficient(room)
    positions, orders = images if images is not None else image_sources(source, room)
    distances = numpy.linalg.norm(positions - numpy.asarray(receiver), axis=-1)
    amplitudes = numpy.power(r, orders) / (4 * numpy.pi * distances)
    return render_impulse_response(distances, amplitudes, room)


def _speaker_column(room, speaker, mics):
    images = image_sources(speaker, room)
    return numpy.stack([simulate_pair(room, speaker, mic, images) for mic in mics])


def simulate_zone(room, speakers, mics, zone):
    """
    Simulate the K×L grid of one zone at room.sound_speed_mps.

    Speakers are farmed out to the dask thread pool; each column is computed
    independently so the result does not depend on the number of workers.
    """
    import dask

    speakers = _points(speakers, "speakers")
    mics = _points(mics, "mics")
    for l, speaker in enumerate(speakers):  # noqa: E741
        if not room.contains(speaker):
            raise SourceOutsideRoom(
                f"Loudspeaker {l} at {speaker.tolist()} is not strictly inside "
                f"the {room.dimensions} room."
            )
    for k, mic in enumerate(mics):
        if not room.contains(mic):
            raise ReceiverOutsideRoom(
                f"Microphone {k} at {mic.tolist()} is not strictly inside "
                f"the {room.dimensions} room."
            )
    columns = compute(
        *(dask.delayed(_speaker_column)(room, speaker, mics) for speaker in speakers)
    )
    samples = numpy.stack(columns, axis=1)
    logger.info(
        "Simulated %s zone: K=%d L=%d N=%d at c=%.3f m/s",
        Zone(zone).value,
        len(mics),
        len(speakers),
        room.n_samples,
        room.sound_speed_mps,
    )
    grid = IrGrid.from_array(
        zone,
        samples,
        room.sample_rate_hz,
        room.sound_speed_mps,
        mics,
        speakers,
        metadata={
            "room": {
                "dimensions": list(room.dimensions),
                "rt60_s": room.rt60_s,
                "max_reflection_order": room.max_reflection_order,
            }
        },
    )
    return validate_grid(grid)


def simulate_zones(room, array):
    "Both zones of an ArraySpec; returns (bright, dark)."
    return (
        simulate_zone(room, array.speaker_positions, array.bright_mic_positions, Zone.bright),
        simulate_zone(room, array.speaker_positions, array.dark_mic_positions, Zone.dark),
    )


def schroeder_decay_time(samples, sample_rate_hz, fit_range_db=(-5.0, -35.0)):
    """
    Reverberation time from the Schroeder energy decay curve, fitting a line
    over fit_range_db and extrapolating to −60 dB.
    """
    samples = numpy.asarray(samples, dtype=numpy.float64)
    return decay_span(samples ** 2, 1 / sample_rate_hz, fit_range_db)


def decay_span(energy, step, fit_range_db=(-5.0, -35.0)):
    """
    Span, in units of step, over which the backward-integrated energy falls
    60 dB, extrapolated from a line fitted over fit_range_db.
    """
    edc = numpy.cumsum(numpy.asarray(energy, dtype=numpy.float64)[::-1])[::-1]
    if edc[0] <= 0:
        raise InvalidInput("Cannot estimate the decay of an all-zero response.")
    with numpy.errstate(divide="ignore"):
        edc_db = 10 * numpy.log10(edc / edc[0])
    upper, lower = fit_range_db
    region = numpy.nonzero((edc_db <= upper) & (edc_db >= lower))[0]
    if len(region) < 2:
        raise InvalidInput(
            f"The decay curve never spans {upper} to {lower} dB; the response is too short."
        )
    slope, _intercept = numpy.polyfit(region * step, edc_db[region], 1)
    return -60.0 / slope


def hex_layout(center, count, spacing=MIC_SPACING):
    """
    The count points of a planar hexagonal lattice nearest to center
    (ties broken by angle). 37 points fill exactly three rings.
    """
    rings = int(math.ceil(math.sqrt(count))) + 1
    i, j = numpy.meshgrid(numpy.arange(-rings, rings + 1), numpy.arange(-rings, rings + 1))
    i, j = i.ravel(), j.ravel()
    dx = spacing * (i + 0.5 * j)
    dy = spacing * (math.sqrt(3) / 2) * j
    radius = numpy.round(numpy.hypot(dx, dy), 9)
    angle = numpy.round(numpy.mod(numpy.arctan2(dy, dx), 2 * numpy.pi), 9)
    order = numpy.lexsort((angle, radius))[:count]
    cx, cy, cz = center
    return numpy.stack([cx + dx[order], cy + dy[order], numpy.full(count, cz)], axis=-1)


def line_layout(center, count, spacing=SPEAKER_SPACING):
    "count points along x, centered on center."
    cx, cy, cz = center
    offsets = (numpy.arange(count) - (count - 1) / 2) * spacing
    return numpy.stack([cx + offsets, numpy.full(count, cy), numpy.full(count, cz)], axis=-1)


@dataclass(frozen=True)
class ScaleTier:
    scale: float
    n_speakers: int
    n_mics: int
    n_samples: int
    sample_rate_hz: float
    rt60_s: float
    filter_len_j: int


# Documented tiers for default_paper_geometry. A requested scale uses the
# smallest tier at or above it.
SCALE_TIERS = (
    ScaleTier(0.25, 4, 5, 1024, 8000.0, 0.2, 128),
    ScaleTier(0.5, 8, 19, 1484, 16000.0, 0.3, 400),
    ScaleTier(1.0, 16, 37, 2967, 16000.0, 0.3, 800),
)
DESK_SCALE = 0.25
ROOM_DIMENSIONS = (4.5, 4.5, 2.2)
DESIGN_SOUND_SPEED = 343.0
ARRAY_CENTER = (2.25, 1.0, ARRAY_HEIGHT)
BRIGHT_CENTER = (1.55, 2.0, ARRAY_HEIGHT)
DARK_CENTER = (2.95, 2.0, ARRAY_HEIGHT)


def scale_tier(scale):
    if not 0 < scale <= 1:
        raise InvalidInput(f"scale must be in (0, 1], not {scale}")
    return next(tier for tier in SCALE_TIERS if tier.scale >= scale)


def default_paper_geometry(scale=1.0, sound_speed_mps=DESIGN_SOUND_SPEED):
    """
    The reference layout: a linear array of loudspeakers 6 cm apart facing a
    bright and a dark zone of microphones 9 cm apart, all 1.2 m high, in a
    4.5 m × 4.5 m × 2.2 m room.

    ========  ===  ===  =====  ======  =====  ===
    scale      L    K     N     f_s    rt60    J
    ========  ===  ===  =====  ======  =====  ===
    1.0        16   37  2967   16 kHz  0.3 s  800
    0.5         8   19  1484   16 kHz  0.3 s  400
    0.25 desk   4    5  1024    8 kHz  0.2 s  128
    ========  ===  ===  =====  ======  =====  ===
    """
    tier = scale_tier(scale)
    room = RoomSpec(
        dimensions=ROOM_DIMENSIONS,
        rt60_s=tier.rt60_s,
        sample_rate_hz=tier.sample_rate_hz,
        sound_speed_mps=sound_speed_mps,
        n_samples=tier.n_samples,
    )
    array = ArraySpec(
        speaker_positions=line_layout(ARRAY_CENTER, tier.n_speakers),
        bright_mic_positions=hex_layout(BRIGHT_CENTER, tier.n_mics),
        dark_mic_positions=hex_layout(DARK_CENTER, tier.n_mics),
    )
    return room, array


def virtual_source_index(n_speakers):
    "1-based index of the loudspeaker used as the desired virtual source."
    return int(math.ceil(n_speakers / 2))


PRESET_SCALES = {"paper": 1.0, "desk": DESK_SCALE}
