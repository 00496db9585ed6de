"""Multirate episode recording and the "BIEP" binary episode file.

Layout (little-endian, no padding)::

    magic "BIEP" | u16 version | u16 n_joints | u32 robot_rate_hz
    | u32 image_rate_hz | u16 img_w | u16 img_h | u8 n_cameras | u8 end_flag
    | u64 n_samples | u64 n_frames | u32 meta_len | meta (UTF-8 key=value lines)
    | samples: u64 t_us + 6*n_joints f64 | frames: u64 t_us + u8 cam + w*h*3 u8
    | u32 CRC32 of everything before it

Per joint the six sample values are ordered theta_l, dtheta_l, tau_l,
theta_f, dtheta_f, tau_f, joints in arm-major order. The torque channels
hold reaction-force observer estimates.

Motor commands and ground-truth torques, which the replay tool needs, go to
an optional ``<file>.dbg.npz`` sidecar so the episode layout stays fixed.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (CorruptionError, DimensionError, EpisodeStateError, FormatError,
                     SequencingError, UnsupportedVersionError)

MAGIC = b"BIEP"
VERSION = 1
HEADER = struct.Struct("<4sHHIIHHBBQQI")
CRC = struct.Struct("<I")
FIELDS = ("theta_l", "dtheta_l", "tau_l", "theta_f", "dtheta_f", "tau_f")
TICK_US = 1000
FRAME_EVERY = 10


def sample_dtype(n_joints):
    return np.dtype([("t_us", "<u8"), ("v", "<f8", (n_joints * 6,))])


def frame_dtype(w, h):
    return np.dtype([("t_us", "<u8"), ("cam", "u1"), ("px", "u1", (h * w * 3,))])


@dataclass
class JointSample:
    t_us: int
    values: np.ndarray  # (n_joints, 6)


@dataclass
class Frame:
    t_us: int
    cam_id: int
    pixels: np.ndarray  # (H, W, 3) uint8


@dataclass
class EpisodeHeader:
    n_joints: int
    robot_rate_hz: int = 1000
    image_rate_hz: int = 100
    img_w: int = 32
    img_h: int = 32
    n_cameras: int = 2
    end_flag: bool = False
    meta: dict = field(default_factory=dict)
    declared_samples: int | None = None
    declared_frames: int | None = None


class Episode:
    """Growable container of 1 kHz joint samples and camera frames."""

    def __init__(self, header: EpisodeHeader):
        self.header = header
        self._t: list[int] = []
        self._v: list[np.ndarray] = []
        self._ft: list[int] = []
        self._fc: list[int] = []
        self._fp: list[np.ndarray] = []
        self._last_frame_t: dict[int, int] = {}
        self._cache: dict = {}
        self.debug: dict[str, np.ndarray] = {}

    @property
    def finalized(self) -> bool:
        return self.header.end_flag

    @property
    def n_samples(self) -> int:
        return len(self._t)

    @property
    def n_frames(self) -> int:
        return len(self._ft)

    @property
    def duration_ms(self) -> int:
        return self.n_samples

    def append_sample(self, sample: JointSample):
        if self.finalized:
            raise EpisodeStateError("episode is finalized")
        values = np.asarray(sample.values, dtype=np.float64)
        if values.shape != (self.header.n_joints, 6):
            raise DimensionError(f"sample values shape {values.shape} != ({self.header.n_joints}, 6)")
        t = int(sample.t_us)
        if self._t and t <= self._t[-1]:
            raise SequencingError(f"sample at t={t} us does not follow t={self._t[-1]} us")
        self._t.append(t)
        self._v.append(values)
        self._cache.clear()
        return self

    def append_frame(self, frame: Frame):
        if self.finalized:
            raise EpisodeStateError("episode is finalized")
        h = self.header
        cam = int(frame.cam_id)
        if not 0 <= cam < h.n_cameras:
            raise DimensionError(f"camera id {cam} out of range (have {h.n_cameras})")
        px = np.asarray(frame.pixels)
        if px.shape != (h.img_h, h.img_w, 3) or px.dtype != np.uint8:
            raise DimensionError(f"frame shape {px.shape}/{px.dtype} != ({h.img_h}, {h.img_w}, 3)/uint8")
        t = int(frame.t_us)
        last = self._last_frame_t.get(cam)
        if last is not None and t <= last:
            raise SequencingError(f"frame for camera {cam} at t={t} us does not follow t={last} us")
        self._last_frame_t[cam] = t
        self._ft.append(t)
        self._fc.append(cam)
        self._fp.append(px)
        self._cache.clear()
        return self

    def finalize(self):
        if self.finalized:
            raise EpisodeStateError("episode already finalized")
        self.header.end_flag = True
        self.header.declared_samples = self.n_samples
        self.header.declared_frames = self.n_frames
        return self

    def _arr(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def sample_times(self) -> np.ndarray:
        return self._arr("t", lambda: np.array(self._t, dtype=np.uint64))

    @property
    def sample_values(self) -> np.ndarray:
        n = self.header.n_joints
        return self._arr("v", lambda: np.stack(self._v) if self._v else np.zeros((0, n, 6)))

    @property
    def frame_times(self) -> np.ndarray:
        return self._arr("ft", lambda: np.array(self._ft, dtype=np.uint64))

    @property
    def frame_cams(self) -> np.ndarray:
        return self._arr("fc", lambda: np.array(self._fc, dtype=np.uint8))

    @property
    def frame_pixels(self) -> np.ndarray:
        h = self.header
        return self._arr("fp", lambda: np.stack(self._fp) if self._fp
                         else np.zeros((0, h.img_h, h.img_w, 3), np.uint8))

    def camera_frames(self, cam: int):
        """Indices (into the frame list) of camera ``cam`` in time order."""
        return np.flatnonzero(self.frame_cams == cam)

    def leader_states(self) -> np.ndarray:
        v = self.sample_values
        return v[:, :, 0:3].reshape(len(v), -1)

    def follower_states(self) -> np.ndarray:
        v = self.sample_values
        return v[:, :, 3:6].reshape(len(v), -1)

    @classmethod
    def from_arrays(cls, header, t_us, values, frame_t=(), frame_cam=(), frame_px=None):
        ep = cls(header)
        ep._t = [int(t) for t in t_us]
        ep._v = list(np.asarray(values, dtype=np.float64))
        ep._ft = [int(t) for t in frame_t]
        ep._fc = [int(c) for c in frame_cam]
        ep._fp = [] if frame_px is None else list(frame_px)
        for t, c in zip(ep._ft, ep._fc):
            ep._last_frame_t[c] = t
        return ep

    def structurally_equal(self, other: "Episode") -> bool:
        a, b = self.header, other.header
        same_header = (a.n_joints, a.robot_rate_hz, a.image_rate_hz, a.img_w, a.img_h, a.n_cameras,
                       a.end_flag, a.meta) == (b.n_joints, b.robot_rate_hz, b.image_rate_hz, b.img_w,
                                               b.img_h, b.n_cameras, b.end_flag, b.meta)
        return (same_header
                and np.array_equal(self.sample_times, other.sample_times)
                and self.sample_values.tobytes() == other.sample_values.tobytes()
                and np.array_equal(self.frame_times, other.frame_times)
                and np.array_equal(self.frame_cams, other.frame_cams)
                and np.array_equal(self.frame_pixels, other.frame_pixels))


def append_sample(ep: Episode, sample: JointSample) -> Episode:
    return ep.append_sample(sample)


def append_frame(ep: Episode, frame: Frame) -> Episode:
    return ep.append_frame(frame)


def _encode_meta(meta: dict) -> bytes:
    lines = []
    for k, v in meta.items():
        k, v = str(k), str(v)
        if "=" in k or "\n" in k or "\n" in v:
            raise FormatError(f"meta entry {k!r} cannot be encoded as a key=value line")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def _decode_meta(raw: bytes, offset: int) -> dict:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("meta block is not UTF-8", offset + exc.start) from None
    meta = {}
    for line in text.split("\n") if text else []:
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"meta line {line!r} is not key=value", offset)
        meta[key] = value
    return meta


def encode_episode(ep: Episode) -> bytes:
    if not ep.finalized:
        raise EpisodeStateError("only finalized episodes can be written")
    h = ep.header
    meta = _encode_meta(h.meta)
    head = HEADER.pack(MAGIC, VERSION, h.n_joints, h.robot_rate_hz, h.image_rate_hz, h.img_w, h.img_h,
                       h.n_cameras, 1, ep.n_samples, ep.n_frames, len(meta))
    samples = np.zeros(ep.n_samples, dtype=sample_dtype(h.n_joints))
    samples["t_us"] = ep.sample_times
    samples["v"] = ep.sample_values.reshape(ep.n_samples, 6 * h.n_joints)
    frames = np.zeros(ep.n_frames, dtype=frame_dtype(h.img_w, h.img_h))
    frames["t_us"] = ep.frame_times
    frames["cam"] = ep.frame_cams
    frames["px"] = ep.frame_pixels.reshape(ep.n_frames, h.img_h * h.img_w * 3)
    body = b"".join([head, meta, samples.tobytes(), frames.tobytes()])
    return body + CRC.pack(zlib.crc32(body))


def decode_episode(data: bytes) -> Episode:
    if len(data) < 4:
        raise FormatError("file too short for magic", len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", 0)
    if len(data) < 6:
        raise FormatError("truncated inside header", len(data))
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported episode version {version}", 4)
    if len(data) < HEADER.size:
        raise FormatError("truncated inside header", len(data))
    (_, _, n_joints, robot_rate, image_rate, w, h, n_cams, end_flag,
     n_samples, n_frames, meta_len) = HEADER.unpack_from(data, 0)
    pos = HEADER.size
    if len(data) < pos + meta_len:
        raise FormatError("truncated inside meta block", pos)
    meta = _decode_meta(data[pos:pos + meta_len], pos)
    pos += meta_len

    sdt, fdt = sample_dtype(n_joints), frame_dtype(w, h)
    need = n_samples * sdt.itemsize
    if len(data) < pos + need:
        i = (len(data) - pos) // sdt.itemsize
        raise FormatError(f"truncated in sample {i} of {n_samples}", pos + i * sdt.itemsize)
    samples = np.frombuffer(data, dtype=sdt, count=n_samples, offset=pos)
    pos += need
    need = n_frames * fdt.itemsize
    if len(data) < pos + need:
        i = (len(data) - pos) // fdt.itemsize
        raise FormatError(f"truncated in frame {i} of {n_frames}", pos + i * fdt.itemsize)
    frames = np.frombuffer(data, dtype=fdt, count=n_frames, offset=pos)
    pos += need
    if len(data) < pos + CRC.size:
        raise FormatError("truncated in checksum", pos)
    if len(data) > pos + CRC.size:
        raise FormatError(f"{len(data) - pos - CRC.size} trailing bytes after checksum", pos + CRC.size)
    (stored,) = CRC.unpack_from(data, pos)
    actual = zlib.crc32(data[:pos])
    if stored != actual:
        raise CorruptionError(f"checksum mismatch: stored {stored:#010x}, computed {actual:#010x}", pos)

    header = EpisodeHeader(n_joints, robot_rate, image_rate, w, h, n_cams, bool(end_flag), meta,
                           int(n_samples), int(n_frames))
    values = samples["v"].reshape(n_samples, n_joints, 6).copy()
    px = frames["px"].reshape(n_frames, h, w, 3).copy()
    return Episode.from_arrays(header, samples["t_us"], values, frames["t_us"], frames["cam"], px)


def write_episode(ep: Episode, path) -> Path:
    path = Path(path)
    data = encode_episode(ep)
    try:
        path.write_bytes(data)
        if ep.debug:
            np.savez(debug_path(path), **ep.debug)
    except OSError as exc:
        raise OSError(f"cannot write episode to {path}: {exc}") from exc
    return path


def debug_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".dbg.npz")


def read_episode(path, with_debug: bool = False) -> Episode:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read episode {path}: {exc}") from exc
    ep = decode_episode(data)
    if with_debug and debug_path(path).exists():
        with np.load(debug_path(path)) as z:
            ep.debug = {k: z[k] for k in z.files}
    return ep


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def validate_episode(ep: Episode) -> ValidationReport:
    rep = ValidationReport()
    h = ep.header
    t = ep.sample_times.astype(np.int64)
    if not h.end_flag:
        rep.violations.append("end flag not set")
    if h.declared_samples is not None and h.declared_samples != ep.n_samples:
        rep.violations.append(f"header declares {h.declared_samples} samples, body has {ep.n_samples}")
    if h.declared_frames is not None and h.declared_frames != ep.n_frames:
        rep.violations.append(f"header declares {h.declared_frames} frames, body has {ep.n_frames}")
    if len(t) > 1:
        steps = np.diff(t)
        for i in np.flatnonzero(steps != TICK_US)[:20]:
            rep.violations.append(f"sample {i + 1}: time step {steps[i]} us != {TICK_US} us")
    vals = ep.sample_values
    bad = np.argwhere(~np.isfinite(vals))
    for i, j, k in bad[:20]:
        rep.violations.append(f"sample {i}: non-finite {FIELDS[k]}[joint {j}]")

    ft = ep.frame_times.astype(np.int64)
    fc = ep.frame_cams
    if len(ft):
        if len(t) == 0 or ft.min() < t[0] or ft.max() > t[-1]:
            rep.violations.append("frame timestamps fall outside the sample span")
        if fc.max() >= h.n_cameras:
            rep.violations.append(f"frame camera id {int(fc.max())} >= {h.n_cameras}")
    if len(t):
        slots = np.arange(t[0], t[-1] + 1, FRAME_EVERY * TICK_US)
        for cam in range(h.n_cameras):
            got = np.sort(ft[fc == cam])
            if len(got) < len(slots):
                rep.warnings.append(f"camera {cam}: {len(slots) - len(got)} of {len(slots)} frames missing")
            elif len(got) == len(slots) and not np.array_equal(got, slots):
                rep.warnings.append(f"camera {cam}: frame cadence is jittered")
    return rep
