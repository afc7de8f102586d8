"""
This module handles experiment and room configuration files.

Files are YAML (or JSON, which YAML reads too) and may reference environment
variables. A configuration path may be a single file or a directory of files;
each key may be set in only one of them.
"""
from pathlib import Path

from .acoustics.room import ArraySpec, RoomSpec
from .utils import InvalidInput, parse


ROOM_KEYS = (
    "dimensions",
    "rt60_s",
    "sample_rate_hz",
    "sound_speed_mps",
    "n_samples",
)
ARRAY_KEYS = ("speakers", "bright_mics", "dark_mics")


class ConfigError(InvalidInput):
    pass


def merge(configs):
    "Merge {filepath: mapping}; a key defined in two files is an error."
    merged = {}
    sources = {}  # map each key to the file that set it
    for filepath, config in configs.items():
        if config is None:
            continue
        if not isinstance(config, dict):
            raise ConfigError(f"{filepath} must contain a mapping at the top level.")
        for key, value in config.items():
            if key in merged:
                raise ConfigError(
                    f"{key!r} can only be specified in one file. "
                    f"It was found in both {sources[key]} and {filepath}."
                )
            sources[key] = filepath
            merged[key] = value
    return merged


def parse_configs(config_path):
    if isinstance(config_path, str):
        config_path = Path(config_path)
    if config_path.is_file():
        filepaths = [config_path]
    elif config_path.is_dir():
        filepaths = list(config_path.iterdir())
    elif not config_path.exists():
        raise ConfigError(f"The config path {config_path!s} doesn't exist.")
    else:
        raise ConfigError(f"The config path {config_path!s} is neither a file nor a directory.")

    parsed_configs = {}
    # The sorting here is just to make the order of the results deterministic.
    # There is *not* any sorting-based precedence applied.
    for filepath in sorted(filepaths):
        # Ignore hidden files and .py files.
        if (
            filepath.parts[-1].startswith(".")
            or filepath.suffix == ".py"
            or filepath.parts[-1] == "__pycache__"
            or filepath.is_dir()
        ):
            continue
        with open(filepath) as file:
            try:
                parsed_configs[filepath] = parse(file)
            except Exception as err:
                raise ConfigError(f"Could not parse {filepath}: {err}") from err
    return merge(parsed_configs)


def room_from_config(config):
    """
    Build (RoomSpec, ArraySpec) from a mapping mirroring their fields.

    ``max_reflection_order`` may be an integer or "auto".
    """
    missing = [key for key in ROOM_KEYS + ARRAY_KEYS if key not in config]
    if missing:
        raise ConfigError(f"Room configuration is missing {missing}.")
    order = config.get("max_reflection_order", "auto")
    try:
        room = RoomSpec(
            dimensions=tuple(config["dimensions"]),
            rt60_s=float(config["rt60_s"]),
            sample_rate_hz=float(config["sample_rate_hz"]),
            sound_speed_mps=float(config["sound_speed_mps"]),
            n_samples=int(config["n_samples"]),
            max_reflection_order=None if order in (None, "auto") else int(order),
        )
        array = ArraySpec(
            speaker_positions=config["speakers"],
            bright_mic_positions=config["bright_mics"],
            dark_mic_positions=config["dark_mics"],
        )
    except (TypeError, ValueError) as err:
        if isinstance(err, InvalidInput):
            raise
        raise ConfigError(f"Invalid room configuration: {err}") from err
    return room, array


def room_to_config(room, array):
    "The inverse of room_from_config, for writing presets out."
    return {
        "dimensions": list(room.dimensions),
        "rt60_s": room.rt60_s,
        "sample_rate_hz": room.sample_rate_hz,
        "sound_speed_mps": room.sound_speed_mps,
        "n_samples": room.n_samples,
        "max_reflection_order": (
            "auto" if room.max_reflection_order is None else room.max_reflection_order
        ),
        "speakers": array.speaker_positions.tolist(),
        "bright_mics": array.bright_mic_positions.tolist(),
        "dark_mics": array.dark_mic_positions.tolist(),
    }


def resolve(preset_values, file_values=None, flag_values=None):
    """
    Layer configuration sources: flags override the config file, which
    overrides the preset. Flags left as None do not override.
    """
    resolved = dict(preset_values)
    resolved.update(file_values or {})
    resolved.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    return resolved
