"""Offset-phased downsampling of 1 kHz episodes into 100 Hz training sequences.

Every offset ``j < factor`` yields one sequence holding samples ``j, j+factor,
...``, so one recorded episode becomes ``factor`` sequences and no sample is
used twice. Sequences only store indices into their source episode; frames
are referenced by index too, never copied.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .datalog import Episode, read_episode
from .errors import ConfigurationError, PairingError


@dataclass
class TrainingSequence:
    episode_id: str
    offset: int
    factor: int
    sample_indices: np.ndarray
    frame_refs: np.ndarray | None = None  # (T, n_cameras) indices into the episode's frame list
    episode: Episode | None = None

    def __len__(self):
        return len(self.sample_indices)

    @property
    def t_us(self) -> np.ndarray:
        return self.episode.sample_times[self.sample_indices]

    @property
    def values(self) -> np.ndarray:
        return self.episode.sample_values[self.sample_indices]

    def follower_states(self) -> np.ndarray:
        v = self.values
        return v[:, :, 3:6].reshape(len(v), -1)

    def leader_states(self) -> np.ndarray:
        v = self.values
        return v[:, :, 0:3].reshape(len(v), -1)


def downsample_offsets(ep: Episode, factor: int = 10, episode_id: str = "") -> list[TrainingSequence]:
    rate = ep.header.robot_rate_hz
    if not isinstance(factor, (int, np.integer)) or factor <= 0 or rate % factor:
        raise ConfigurationError(f"factor {factor!r} must be a positive divisor of the robot rate {rate} Hz")
    n = ep.n_samples
    return [TrainingSequence(episode_id, j, int(factor), np.arange(j, n, factor), None, ep)
            for j in range(factor)]


def nearest_frames(sample_t: np.ndarray, frame_t: np.ndarray) -> np.ndarray:
    """Index into sorted ``frame_t`` of the nearest frame per sample; ties pick the earlier frame."""
    sample_t = np.asarray(sample_t, dtype=np.int64)
    frame_t = np.asarray(frame_t, dtype=np.int64)
    right = np.clip(np.searchsorted(frame_t, sample_t, side="left"), 0, len(frame_t) - 1)
    left = np.clip(right - 1, 0, len(frame_t) - 1)
    d_left = np.abs(sample_t - frame_t[left])
    d_right = np.abs(frame_t[right] - sample_t)
    return np.where(d_left <= d_right, left, right)


def pair_images(seq: TrainingSequence, ep: Episode | None = None) -> TrainingSequence:
    ep = ep if ep is not None else seq.episode
    if ep.n_frames == 0:
        raise PairingError(f"episode {seq.episode_id!r} has no frames to pair with")
    ft = ep.frame_times.astype(np.int64)
    refs = np.empty((len(seq.sample_indices), ep.header.n_cameras), dtype=np.int64)
    t = ep.sample_times[seq.sample_indices].astype(np.int64)
    for cam in range(ep.header.n_cameras):
        idx = ep.camera_frames(cam)
        if len(idx) == 0:
            raise PairingError(f"episode {seq.episode_id!r} has no frames from camera {cam}")
        order = idx[np.argsort(ft[idx], kind="stable")]
        refs[:, cam] = order[nearest_frames(t, ft[order])]
    return replace(seq, frame_refs=refs, episode=ep)


def augment(episodes, factor: int = 10, ids=None) -> list[TrainingSequence]:
    """Downsample and pair every episode; output ordered by (episode, offset)."""
    out = []
    for i, ep in enumerate(episodes):
        eid = ids[i] if ids is not None else str(i)
        out.extend(pair_images(s, ep) for s in downsample_offsets(ep, factor, eid))
    return out


MANIFEST = "manifest.json"


def augment_directory(in_dir, factor: int, out_dir) -> Path:
    """Write a manifest listing (source episode, offset) for every sequence."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    files = sorted(in_dir.glob("*.biep"))
    if not files:
        raise ConfigurationError(f"no .biep episodes in {in_dir}")
    rows = []
    for path in files:
        ep = read_episode(path)
        for seq in downsample_offsets(ep, factor, path.name):
            pair_images(seq, ep)
            rows.append({"episode": str(path.resolve()), "offset": seq.offset, "samples": len(seq)})
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / MANIFEST
    manifest.write_text(json.dumps({"factor": factor, "sequences": rows}, indent=1))
    return manifest


def load_manifest(path):
    """Rebuild the paired sequences listed in a manifest (episodes read once each)."""
    path = Path(path)
    listing = json.loads(path.read_text())
    factor = int(listing["factor"])
    cache: dict[str, Episode] = {}
    seqs = []
    for row in listing["sequences"]:
        src = row["episode"]
        if src not in cache:
            cache[src] = read_episode(src)
        ep = cache[src]
        seq = downsample_offsets(ep, factor, Path(src).name)[int(row["offset"])]
        seqs.append(pair_images(seq, ep))
    return seqs
