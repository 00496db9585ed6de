"""The "BIWT" weights file.

``magic "BIWT" | u16 version | u32 config_len | config (UTF-8 key=value lines)``
followed, per parameter in registration order, by
``u16 name_len | name | u8 rank | u32 dims... | f32 values`` (little-endian).

The config block always carries a ``param_count`` entry so a file cut at a
record boundary is still detected as truncated.
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import FormatError, UnsupportedVersionError

MAGIC = b"BIWT"
VERSION = 1


COUNT_KEY = "param_count"


def encode_weights(config: dict, arrays) -> bytes:
    config = {**config, COUNT_KEY: len(arrays)}
    text = "\n".join(f"{k}={v}" for k, v in config.items()).encode("utf-8")
    out = [MAGIC, struct.pack("<HI", VERSION, len(text)), text]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode_weights(data: bytes):
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", 0)
    if len(data) < 10:
        raise FormatError("truncated inside header", len(data))
    version, clen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported weights version {version}", 4)
    pos = 10
    if len(data) < pos + clen:
        raise FormatError("truncated inside config block", pos)
    try:
        text = data[pos:pos + clen].decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("config block is not UTF-8", pos) from None
    config = {}
    for line in text.split("\n") if text else []:
        k, sep, v = line.partition("=")
        if not sep:
            raise FormatError(f"config line {line!r} is not key=value", pos)
        config[k] = v
    pos += clen
    arrays = OrderedDict()
    while pos < len(data):
        start = pos
        try:
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            if len(name.encode("utf-8")) != nlen:
                raise struct.error
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
        except (struct.error, UnicodeDecodeError):
            raise FormatError("truncated or malformed parameter record", start) from None
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        if len(data) < pos + 4 * count:
            raise FormatError(f"truncated values of parameter {name!r}", start)
        arrays[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims).copy()
        pos += 4 * count
    expected = config.pop(COUNT_KEY, None)
    if expected is None or not expected.isdigit():
        raise FormatError("config block lacks a valid param_count", 10)
    if int(expected) != len(arrays):
        raise FormatError(f"file holds {len(arrays)} of {expected} parameters (truncated)", pos)
    return config, arrays


def save_weights(path, config: dict, arrays) -> Path:
    path = Path(path)
    path.write_bytes(encode_weights(config, arrays))
    return path


def load_weights(path):
    return decode_weights(Path(path).read_bytes())
