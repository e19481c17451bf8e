"""Binary codec for model weights files.

Layout (all multi-byte values little-endian)::

    CATSDW\\n
    {"version": "1", "class_list": [...], "layers": [["encoder.0.kernel", [16, 3, 3, 3]], ...]}\\n
    <float64 values of every layer, in header order>
    <CRC-32 of everything above, 4 bytes>
"""

from __future__ import annotations

import json
import struct
from typing import Any, Iterator

from crccheck.crc import Crc32
import numpy as np

from catsd.const import WEIGHTS_MAGIC, WEIGHTS_VERSION
from catsd.exceptions import InvalidWeightsFile


class WeightsDecoder:
    """Decoder to unpack a weights file into its header and named arrays."""

    _byteorder = "<"  # little-endian

    def __init__(self, payload: bytes):
        self._payload = payload
        self._pointer = 0

    def decode_line(self) -> bytes:
        """Decodes bytes up to and excluding the next newline."""
        end = self._payload.find(b"\n", self._pointer)
        if end < 0:
            raise InvalidWeightsFile("Unterminated header line", self._payload)
        line = self._payload[self._pointer : end]
        self._pointer = end + 1
        return line

    def decode_float64_array(self, shape: list[int]) -> np.ndarray:
        """Decodes a float64 array of the given shape from the buffer."""
        count = int(np.prod(shape)) if shape else 1
        size = count * 8
        if self.remaining_bytes < size:
            raise InvalidWeightsFile(
                f"Array of shape {shape} needs {size} bytes, {self.remaining_bytes} bytes remain",
                self._payload,
            )
        self._pointer += size
        handle = self._payload[self._pointer - size : self._pointer]
        return np.frombuffer(handle, dtype=self._byteorder + "f8").reshape(shape).copy()

    def decode_32bit_uint(self) -> int:
        """Decodes a 32-bit unsigned int from the buffer."""
        if self.remaining_bytes < 4:
            raise InvalidWeightsFile("Truncated trailer", self._payload)
        self._pointer += 4
        handle = self._payload[self._pointer - 4 : self._pointer]
        return struct.unpack(self._byteorder + "I", handle)[0]  # type: ignore[no-any-return]

    @property
    def decoding_complete(self) -> bool:
        """Returns whether the payload has been completely decoded."""
        return self._pointer == len(self._payload)

    @property
    def remaining_bytes(self) -> int:
        """Return the number of bytes of the payload that remain undecoded."""
        return len(self._payload) - self._pointer

    def decode(self) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
        """Unpack the whole file, verifying magic, version and checksum."""
        if len(self._payload) < 4:
            raise InvalidWeightsFile("File too short", self._payload)
        body, trailer = self._payload[:-4], self._payload[-4:]
        expected = struct.unpack(self._byteorder + "I", trailer)[0]
        actual = Crc32().process(body).final()
        if expected != actual:
            raise InvalidWeightsFile(
                f"CRC mismatch: expected {expected:08x}, calculated {actual:08x}", self._payload
            )

        if self.decode_line() != WEIGHTS_MAGIC:
            raise InvalidWeightsFile("Not a weights file (bad magic)", self._payload)
        try:
            header = json.loads(self.decode_line().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise InvalidWeightsFile(f"Malformed header: {err}", self._payload) from err
        if header.get("version") != WEIGHTS_VERSION:
            raise InvalidWeightsFile(
                f"Unsupported weights version {header.get('version')!r}", self._payload
            )

        arrays: dict[str, np.ndarray] = {}
        for name, shape in header.get("layers", []):
            arrays[name] = self.decode_float64_array(list(shape))
        self.decode_32bit_uint()
        if not self.decoding_complete:
            raise InvalidWeightsFile(
                f"{self.remaining_bytes} unexpected trailing bytes", self._payload
            )
        return header, arrays


class WeightsEncoder:
    """Encode a header and named arrays into a weights file."""

    _byteorder = "<"  # little-endian
    _payload: bytes

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        """Reset the payload buffer."""
        self._payload = b""

    @property
    def payload(self) -> bytes:
        """Return the payload buffer."""
        return self._payload

    @property
    def crc(self) -> int:
        """Calculate a CRC-32 over the buffer contents."""
        return Crc32().process(self.payload).final()  # type: ignore[no-any-return]

    def add_line(self, value: bytes) -> None:
        """Adds a newline-terminated line to the buffer."""
        self._payload += value + b"\n"

    def add_float64_array(self, value: np.ndarray) -> None:
        """Adds the values of an array in row-major order."""
        self._payload += np.ascontiguousarray(value, dtype=self._byteorder + "f8").tobytes()

    def add_32bit_uint(self, value: int) -> None:
        """Adds a 32-bit unsigned int to the buffer."""
        self._payload += struct.pack(self._byteorder + "I", value)

    def encode(self, class_list: list[int], arrays: Iterator[tuple[str, np.ndarray]]) -> bytes:
        """Build a complete weights file."""
        self.reset()
        layers = list(arrays)
        header = {
            "version": WEIGHTS_VERSION,
            "class_list": class_list,
            "layers": [[name, list(arr.shape)] for name, arr in layers],
        }
        self.add_line(WEIGHTS_MAGIC)
        self.add_line(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        for _, arr in layers:
            self.add_float64_array(arr)
        self.add_32bit_uint(self.crc)
        return self.payload
