"""
On-disk format for one zone's IR grid.

A grid directory holds ``manifest.json`` plus one raw little-endian float32
blob per impulse response::

    {
      "zone": "bright",
      "sample_rate_hz": 8000.0,
      "sound_speed_mps": 343.0,
      "n_samples": 1024,
      "n_mics": 5, "n_speakers": 4,          (optional)
      "mics": [[x, y, z], ...],
      "speakers": [[x, y, z], ...],
      "irs": [{"mic": 0, "speaker": 0, "file": "ir_k000_l000.f32",
               "n_samples": 1024, "sha256": "..."}, ...],
      "metadata": {...}
    }
"""
import hashlib
import json
import os
from pathlib import Path

import numpy

from ..structures.ir import ImpulseResponse, IrGrid, Zone, validate_grid
from ..utils import InvalidInput


MANIFEST_NAME = "manifest.json"
BLOB_DTYPE = numpy.dtype("<f4")
REQUIRED_KEYS = (
    "zone",
    "sample_rate_hz",
    "sound_speed_mps",
    "n_samples",
    "mics",
    "speakers",
    "irs",
)


class MalformedManifest(InvalidInput):
    pass


class MissingBlob(InvalidInput):
    pass


class ChecksumMismatch(InvalidInput):
    pass


def blob_name(k, l):  # noqa: E741
    return f"ir_k{k:03d}_l{l:03d}.f32"


def save_grid(grid, path):
    """
    Write a grid directory. Samples are stored as float32; a grid that was
    itself loaded from disk round-trips bit-exactly.
    """
    validate_grid(grid)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, row in enumerate(grid.irs):
        for l, ir in enumerate(row):  # noqa: E741
            data = ir.samples.astype(BLOB_DTYPE).tobytes()
            filename = blob_name(k, l)
            with open(path / filename, "wb") as file:
                file.write(data)
            entries.append(
                {
                    "mic": k,
                    "speaker": l,
                    "file": filename,
                    "n_samples": len(ir),
                    "label": ir.label,
                    "sha256": hashlib.sha256(data).hexdigest(),
                }
            )
    manifest = {
        "zone": grid.zone.value,
        "sample_rate_hz": grid.sample_rate_hz,
        "sound_speed_mps": grid.sound_speed_mps,
        "n_samples": grid.n_samples,
        "n_mics": grid.n_mics,
        "n_speakers": grid.n_speakers,
        "mics": grid.mic_positions.tolist(),
        "speakers": grid.speaker_positions.tolist(),
        "irs": entries,
        "metadata": dict(grid.metadata),
    }
    # Write to a temporary name first so a crash never leaves a manifest
    # pointing at half-written blobs.
    tmp = path / (MANIFEST_NAME + ".tmp")
    with open(tmp, "w") as file:
        json.dump(manifest, file, indent=2)
    os.replace(tmp, path / MANIFEST_NAME)
    return path


def _read_manifest(path):
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MalformedManifest(f"No {MANIFEST_NAME} in {path!s}.")
    try:
        with open(manifest_path) as file:
            manifest = json.load(file)
    except json.JSONDecodeError as err:
        raise MalformedManifest(f"{manifest_path!s} is not valid JSON: {err}") from err
    if not isinstance(manifest, dict):
        raise MalformedManifest(f"{manifest_path!s} must hold a JSON object.")
    missing = [key for key in REQUIRED_KEYS if key not in manifest]
    if missing:
        raise MalformedManifest(f"{manifest_path!s} is missing keys {missing}.")
    return manifest


def _check_positions(positions, name):
    try:
        array = numpy.array(positions, dtype=numpy.float64)
    except (TypeError, ValueError) as err:
        raise MalformedManifest(f"'{name}' must be a list of [x, y, z].") from err
    if array.ndim != 2 or array.shape[1] != 3:
        raise MalformedManifest(f"'{name}' must be a list of [x, y, z], got shape {array.shape}.")
    return array


def load_grid(path):
    "Read a grid directory written by save_grid (or by hand, per the module docstring)."
    path = Path(path)
    manifest = _read_manifest(path)
    try:
        zone = Zone(manifest["zone"])
    except ValueError as err:
        raise MalformedManifest(f"Unknown zone {manifest['zone']!r}.") from err
    mics = _check_positions(manifest["mics"], "mics")
    speakers = _check_positions(manifest["speakers"], "speakers")
    n_samples = manifest["n_samples"]
    K, L = len(mics), len(speakers)
    for key, count, name in (("n_mics", K, "mics"), ("n_speakers", L, "speakers")):
        if key in manifest and manifest[key] != count:
            raise MalformedManifest(
                f"Manifest declares {key}={manifest[key]} but lists {count} {name} positions."
            )
    if K < 1 or L < 1:
        raise MalformedManifest(f"Manifest declares K={K}, L={L}; both must be >= 1.")
    slots = {}
    for entry in manifest["irs"]:
        try:
            key = (int(entry["mic"]), int(entry["speaker"]))
        except (KeyError, TypeError, ValueError) as err:
            raise MalformedManifest(f"Bad IR entry {entry!r}.") from err
        if not isinstance(entry.get("file"), str):
            raise MalformedManifest(f"IR entry {entry!r} does not name a blob 'file'.")
        if not (0 <= key[0] < K and 0 <= key[1] < L):
            raise MalformedManifest(
                f"IR entry {entry!r} is outside the {K}x{L} grid declared by "
                "the mic and speaker positions."
            )
        if key in slots:
            raise MalformedManifest(f"IR (mic={key[0]}, speaker={key[1]}) listed twice.")
        slots[key] = entry
    if len(slots) != K * L:
        raise MalformedManifest(
            f"Manifest lists {len(slots)} IRs but the geometry implies K*L={K * L}."
        )
    rows = []
    for k in range(K):
        row = []
        for l in range(L):  # noqa: E741
            entry = slots[(k, l)]
            blob_path = path / entry["file"]
            if not blob_path.is_file():
                raise MissingBlob(f"IR (mic={k}, speaker={l}) blob {blob_path!s} does not exist.")
            with open(blob_path, "rb") as file:
                data = file.read()
            expected = entry.get("sha256")
            if expected is not None and hashlib.sha256(data).hexdigest() != expected:
                raise ChecksumMismatch(f"Checksum of {blob_path!s} does not match the manifest.")
            count = entry.get("n_samples", n_samples)
            if len(data) != count * BLOB_DTYPE.itemsize:
                raise MalformedManifest(
                    f"{blob_path!s} holds {len(data)} bytes; expected {count} float32 values."
                )
            samples = numpy.frombuffer(data, dtype=BLOB_DTYPE).astype(numpy.float64)
            row.append(
                ImpulseResponse(
                    samples,
                    manifest["sample_rate_hz"],
                    manifest["sound_speed_mps"],
                    label=entry.get("label", f"{zone.value}:k={k},l={l}"),
                )
            )
        rows.append(row)
    grid = IrGrid(zone, rows, mics, speakers, manifest.get("metadata") or {})
    return validate_grid(grid)
