import numpy
import pytest
import yaml

from ..acoustics.room import DESK_SCALE, default_paper_geometry, simulate_zones
from ..structures.ir import IrGrid, Zone


@pytest.fixture(scope="session")
def desk_geometry():
    return default_paper_geometry(DESK_SCALE)


@pytest.fixture(scope="session")
def desk_grids(desk_geometry):
    "(bright, dark) of the desk preset at 343 m/s."
    room, array = desk_geometry
    return simulate_zones(room, array)


@pytest.fixture(scope="session")
def desk_grids_333(desk_geometry):
    room, array = desk_geometry
    return simulate_zones(room.with_sound_speed(333.0), array)


@pytest.fixture
def make_grid():
    "Factory for small random grids with made-up geometry."

    def make(zone=Zone.bright, K=3, L=2, N=32, seed=0, sample_rate_hz=8000.0, c=343.0):
        rng = numpy.random.default_rng(seed)
        samples = rng.standard_normal((K, L, N))
        mics = numpy.column_stack([numpy.arange(K), numpy.ones(K), numpy.ones(K)])
        speakers = numpy.column_stack([numpy.arange(L), numpy.zeros(L), numpy.ones(L)])
        return IrGrid.from_array(zone, samples, sample_rate_hz, c, mics, speakers)

    return make


TINY_ROOM = {
    "dimensions": [2.0, 2.0, 2.0],
    "rt60_s": 0.1,
    "sample_rate_hz": 8000.0,
    "sound_speed_mps": 343.0,
    "n_samples": 64,
    "max_reflection_order": 4,
    "speakers": [[0.5, 1.0, 1.0], [0.56, 1.0, 1.0]],
    "bright_mics": [[1.2, 0.6, 1.0], [1.25, 0.6, 1.0]],
    "dark_mics": [[1.2, 1.4, 1.0], [1.25, 1.4, 1.0]],
    "filter_len_j": 8,
}


@pytest.fixture
def tiny_room(tmp_path):
    "Path of a small room configuration file (L=2, K=2, N=64, J=8)."
    path = tmp_path / "room.yml"
    path.write_text(yaml.safe_dump(TINY_ROOM))
    return path
