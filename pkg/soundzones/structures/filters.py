"""
Control filter banks and their ``filters.bin`` encoding.

Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON header
``{"n_speakers": L, "filter_len": J, "provenance": {...}}``, then L·J
little-endian float64 values, speaker-major (w_1 first).
"""
import json
import struct

import numpy

from ..utils import DictView, InvalidInput


_LENGTH = struct.Struct("<Q")
BLOB_DTYPE = numpy.dtype("<f8")


class MalformedFilterFile(InvalidInput):
    pass


class InvalidFilterBank(InvalidInput):
    pass


class ControlFilterBank:
    """
    The stacked filter w = [w_1; ...; w_L], each w_l of length J.

    Provenance records how the filter was designed (rank, mu, whether the IRs
    were SICER-corrected, ...). It must be JSON-serializable.
    """

    __slots__ = ("_w", "_n_speakers", "_filter_len", "_provenance")

    def __init__(self, w, n_speakers, filter_len, provenance=None):
        w = numpy.array(w, dtype=numpy.float64).ravel()
        if len(w) != n_speakers * filter_len:
            raise InvalidFilterBank(
                f"Filter of length {len(w)} does not match L*J={n_speakers * filter_len}."
            )
        if not numpy.all(numpy.isfinite(w)):
            raise InvalidFilterBank("Control filter has non-finite entries.")
        w.setflags(write=False)
        self._w = w
        self._n_speakers = int(n_speakers)
        self._filter_len = int(filter_len)
        self._provenance = dict(provenance or {})

    def __repr__(self):
        return (
            f"<{type(self).__name__} L={self._n_speakers} J={self._filter_len} "
            f"rank_v={self._provenance.get('rank_v')}>"
        )

    def __len__(self):
        return len(self._w)

    @property
    def w(self):
        return self._w

    @property
    def n_speakers(self):
        return self._n_speakers

    @property
    def filter_len(self):
        return self._filter_len

    @property
    def dims(self):
        return (self._n_speakers, self._filter_len)

    @property
    def provenance(self):
        return DictView(self._provenance)

    def per_speaker(self):
        "Filters as an (L, J) array."
        return self._w.reshape(self._n_speakers, self._filter_len)

    def scaled(self, factor):
        return type(self)(self._w * factor, self._n_speakers, self._filter_len, self._provenance)

    def to_bytes(self):
        header = json.dumps(
            {
                "n_speakers": self._n_speakers,
                "filter_len": self._filter_len,
                "provenance": self._provenance,
            },
            sort_keys=True,
        ).encode()
        return _LENGTH.pack(len(header)) + header + self._w.astype(BLOB_DTYPE).tobytes()

    @classmethod
    def from_bytes(cls, buffer):
        if len(buffer) < _LENGTH.size:
            raise MalformedFilterFile("Filter file is too short to hold a header.")
        (header_len,) = _LENGTH.unpack_from(buffer)
        start = _LENGTH.size
        try:
            header = json.loads(bytes(buffer[start:start + header_len]).decode())
            L, J = int(header["n_speakers"]), int(header["filter_len"])
        except (ValueError, KeyError, TypeError) as err:
            raise MalformedFilterFile(f"Unreadable filter header: {err}") from err
        body = buffer[start + header_len:]
        if len(body) != L * J * BLOB_DTYPE.itemsize:
            raise MalformedFilterFile(
                f"Filter body holds {len(body)} bytes; expected {L * J} float64 values."
            )
        w = numpy.frombuffer(body, dtype=BLOB_DTYPE)
        return cls(w, L, J, header.get("provenance"))

    def write(self, path):
        with open(path, "wb") as file:
            file.write(self.to_bytes())

    @classmethod
    def read(cls, path):
        with open(path, "rb") as file:
            return cls.from_bytes(file.read())
