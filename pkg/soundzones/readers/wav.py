"""
WAV import. WAV is never written; save_grid is the only export path.
"""
from pathlib import Path

import numpy
import scipy.io.wavfile

from ..structures.ir import ImpulseResponse, IrGrid, Zone, validate_grid
from ..utils import InvalidInput


class UnsupportedWav(InvalidInput):
    pass


# Full-scale divisors for integer PCM.
_PCM_SCALE = {
    numpy.dtype("int16"): 2.0 ** 15,
    numpy.dtype("int32"): 2.0 ** 31,
}
MANIFEST_KEYS = ("zone", "sound_speed_mps", "mics", "speakers", "files")


def read_wav(path):
    "Return (sample_rate_hz, float64 samples) for a mono PCM16/PCM32/float32 WAV file."
    sample_rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise UnsupportedWav(
            f"{path!s} has {data.shape[1]} channels; one channel per file is required."
        )
    if data.dtype in _PCM_SCALE:
        samples = data.astype(numpy.float64) / _PCM_SCALE[data.dtype]
    elif data.dtype.kind == "f":
        samples = data.astype(numpy.float64)
    else:
        raise UnsupportedWav(f"{path!s} has unsupported sample type {data.dtype}.")
    if samples.size == 0:
        raise UnsupportedWav(f"{path!s} holds no samples.")
    return float(sample_rate), samples


def read_wav_ir(path, sound_speed_mps, label=None):
    sample_rate, samples = read_wav(path)
    return ImpulseResponse(samples, sample_rate, sound_speed_mps, label=label or str(path))


def grid_from_wav(zone, paths, mic_positions, speaker_positions, sound_speed_mps):
    """
    Build an IrGrid from a K×L nested list of WAV file paths.

    Files of unequal length are not padded; validate_grid reports them.
    """
    irs = [
        [read_wav_ir(path, sound_speed_mps) for path in row]
        for row in paths
    ]
    return validate_grid(IrGrid(zone, irs, mic_positions, speaker_positions))


def grid_from_manifest(path):
    """
    Build an IrGrid from a YAML manifest of measured responses.

    The manifest gives zone, sound_speed_mps, mics and speakers (lists of
    [x, y, z]) and files, a K×L table of WAV paths where row k holds the
    responses at microphone k. Relative paths are resolved against the
    manifest's directory.
    """
    from ..config import ConfigError, parse_configs

    path = Path(path)
    config = parse_configs(path)
    missing = [key for key in MANIFEST_KEYS if key not in config]
    if missing:
        raise ConfigError(f"{path} is missing {', '.join(missing)}.")
    rows = config["files"]
    if not isinstance(rows, list) or not all(isinstance(row, list) for row in rows):
        raise ConfigError(f"files in {path} must be a list of lists of WAV paths.")
    try:
        zone = Zone(config["zone"])
        sound_speed = float(config["sound_speed_mps"])
    except (TypeError, ValueError) as err:
        raise ConfigError(f"Invalid zone or sound_speed_mps in {path}: {err}") from err
    paths = [[path.parent / str(name) for name in row] for row in rows]
    return grid_from_wav(zone, paths, config["mics"], config["speakers"], sound_speed)


def read_excitation(path, sample_rate_hz=None):
    """
    Read an excitation signal, checking its rate against the IRs it will
    drive when sample_rate_hz is given.
    """
    sample_rate, samples = read_wav(path)
    if sample_rate_hz is not None and sample_rate != sample_rate_hz:
        raise UnsupportedWav(
            f"{path!s} is sampled at {sample_rate} Hz but the IRs are at "
            f"{sample_rate_hz} Hz; resample it first."
        )
    return samples
