"""The Bi-ACT policy: conv image encoder, CVAE latent and a transformer decoder
that emits a k-step chunk of leader (angle, velocity, torque) rows.

Everything runs on :mod:`biact.tensornet`. Parameters live in a
:class:`~biact.tensornet.ParamStore` in float32 for training; the gradient
check rebuilds a tiny model in float64.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensornet as tn
from .errors import ConfigurationError, DimensionError, FormatError
from .tensornet import Tensor

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class BiACTConfig:
    n_state: int = 6
    k: int = 20
    latent_dim: int = 16
    model_dim: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int = 128
    conv_channels: tuple[int, int] = (16, 32)
    image_size: tuple[int, int] = (32, 32)
    n_cameras: int = 2
    beta: float = 10.0
    lr: float = 1e-4
    epochs: int = 12
    batch_size: int = 64
    seed: int = 0
    force_mask: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"chunk length k must be >= 1, got {self.k}")
        if self.n_state < 3 or self.n_state % 3:
            raise ConfigurationError(f"state dim {self.n_state} must be a positive multiple of 3")
        if self.model_dim % self.n_heads:
            raise ConfigurationError(f"model dim {self.model_dim} not divisible by {self.n_heads} heads")
        if self.model_dim % 4:
            raise ConfigurationError("model dim must be divisible by 4 for the 2-D positional embedding")
        h, w = self.image_size
        if h % 8 or w % 8:
            raise ConfigurationError(f"image size {self.image_size} must be divisible by 8")
        for name in ("latent_dim", "ffn_dim", "n_cameras", "batch_size", "enc_layers", "dec_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.lr <= 0 or self.beta < 0 or self.epochs < 0:
            raise ConfigurationError("lr must be positive; beta and epochs non-negative")

    @property
    def feature_hw(self) -> tuple[int, int]:
        return self.image_size[0] // 8, self.image_size[1] // 8

    @property
    def n_image_tokens(self) -> int:
        fh, fw = self.feature_hw
        return self.n_cameras * fh * fw

    @property
    def torque_columns(self) -> np.ndarray:
        return np.arange(2, self.n_state, 3)

    def to_text(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_text(cls, d: dict) -> "BiACTConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            raw = d[f.name]
            default = f.default
            if isinstance(default, bool):
                kw[f.name] = raw in ("True", "true", "1")
            elif isinstance(default, tuple):
                kw[f.name] = tuple(int(x) for x in raw.split(","))
            elif isinstance(default, int):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = float(raw)
        return cls(**kw)


# ---------------------------------------------------------------- normalization

@dataclass
class NormStats:
    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray

    @classmethod
    def fit(cls, states, actions) -> "NormStats":
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        if states.size == 0 or actions.size == 0:
            raise ConfigurationError("cannot fit normalization statistics on an empty dataset")
        actions = actions.reshape(-1, actions.shape[-1])
        return cls(states.mean(0).astype(np.float32), np.maximum(states.std(0), SIGMA_FLOOR).astype(np.float32),
                   actions.mean(0).astype(np.float32), np.maximum(actions.std(0), SIGMA_FLOOR).astype(np.float32))

    def arrays(self) -> dict:
        return {"norm.state_mean": self.state_mean, "norm.state_std": self.state_std,
                "norm.action_mean": self.action_mean, "norm.action_std": self.action_std}


def normalize(x, mean, std):
    return (np.asarray(x) - mean) / std


def denormalize(x, mean, std):
    return np.asarray(x) * std + mean


# ---------------------------------------------------------------- parameters

def _attn_params(store, rng, prefix, d):
    for nm in ("q", "k", "v", "o"):
        store.add(f"{prefix}w{nm}", tn.uniform_init(rng, (d, d), d, store.dtype))
        store.add(f"{prefix}b{nm}", np.zeros(d))


def _ffn_params(store, rng, prefix, d, f):
    store.add(prefix + "w1", tn.uniform_init(rng, (d, f), d, store.dtype))
    store.add(prefix + "b1", np.zeros(f))
    store.add(prefix + "w2", tn.uniform_init(rng, (f, d), f, store.dtype))
    store.add(prefix + "b2", np.zeros(d))


def _ln_params(store, prefix, d):
    store.add(prefix + "g", np.ones(d))
    store.add(prefix + "b", np.zeros(d))


def init_params(cfg: BiACTConfig, dtype=np.float32) -> tn.ParamStore:
    """Build every parameter in a fixed registration order from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    s = tn.ParamStore(dtype)
    d, n, z = cfg.model_dim, cfg.n_state, cfg.latent_dim
    c1, c2 = cfg.conv_channels
    for i, (cin, cout) in enumerate(((3, c1), (c1, c2), (c2, d))):
        s.add(f"conv{i}.w", tn.uniform_init(rng, (cout, cin, 3, 3), cin * 9, dtype))
        s.add(f"conv{i}.b", np.zeros(cout))
    s.add("obs.cam_embed", rng.normal(0, 0.02, (cfg.n_cameras, d)))
    s.add("obs.state_w", tn.uniform_init(rng, (n, d), n, dtype))
    s.add("obs.state_b", np.zeros(d))
    s.add("obs.z_w", tn.uniform_init(rng, (z, d), z, dtype))
    s.add("obs.z_b", np.zeros(d))
    s.add("obs.role", rng.normal(0, 0.02, (2, d)))  # z token, state token

    s.add("enc.cls", rng.normal(0, 0.02, (d,)))
    s.add("enc.state_w", tn.uniform_init(rng, (n, d), n, dtype))
    s.add("enc.state_b", np.zeros(d))
    s.add("enc.act_w", tn.uniform_init(rng, (n, d), n, dtype))
    s.add("enc.act_b", np.zeros(d))
    s.add("enc.pos", rng.normal(0, 0.02, (cfg.k + 2, d)))
    for i in range(cfg.enc_layers):
        p = f"enc{i}."
        _ln_params(s, p + "ln1", d)
        _attn_params(s, rng, p + "attn.", d)
        _ln_params(s, p + "ln2", d)
        _ffn_params(s, rng, p + "ffn.", d, cfg.ffn_dim)
    _ln_params(s, "enc.lnf", d)
    s.add("enc.head_w", tn.uniform_init(rng, (d, 2 * z), d, dtype))
    s.add("enc.head_b", np.zeros(2 * z))

    s.add("dec.query", rng.normal(0, 0.02, (cfg.k, d)))
    _ln_params(s, "dec.lnm", d)
    for i in range(cfg.dec_layers):
        p = f"dec{i}."
        _ln_params(s, p + "ln1", d)
        _attn_params(s, rng, p + "self.", d)
        _ln_params(s, p + "ln2", d)
        _attn_params(s, rng, p + "cross.", d)
        _ln_params(s, p + "ln3", d)
        _ffn_params(s, rng, p + "ffn.", d, cfg.ffn_dim)
    _ln_params(s, "dec.lnf", d)
    s.add("dec.head_w", tn.uniform_init(rng, (d, n), d, dtype))
    s.add("dec.head_b", np.zeros(n))
    return s


# ---------------------------------------------------------------- forward pass

def _ln(x, p, prefix):
    return tn.layer_norm(x, p[prefix + "g"], p[prefix + "b"])


def _const(arr, p):
    return Tensor(np.asarray(arr, dtype=p["dec.head_b"].dtype))


def preprocess_images(frames, cfg: BiACTConfig) -> np.ndarray:
    """uint8 (B, cams, H, W, 3) -> float (B, cams, 3, H, W) centred on zero."""
    frames = np.asarray(frames)
    want = (cfg.n_cameras, *cfg.image_size, 3)
    if frames.shape[1:] != want:
        raise DimensionError(f"expected frames of shape (batch, {', '.join(map(str, want))}), got {frames.shape}")
    return frames.transpose(0, 1, 4, 2, 3) / np.float32(255.0) - np.float32(0.5)


def encode_observation(images: np.ndarray, state: np.ndarray, p, cfg: BiACTConfig) -> Tensor:
    """Token sequence ``[image tokens of every camera..., state token]``, shape (B, cams*16+1, D).

    ``images`` is the float output of :func:`preprocess_images`; ``state`` is
    the normalized follower state (B, N).
    """
    b, cams = images.shape[:2]
    d = cfg.model_dim
    fh, fw = cfg.feature_hw
    x = _const(images.reshape(b * cams, *images.shape[2:]), p)
    for i in range(3):
        x = tn.relu(tn.conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=2, padding=1))
    x = x.reshape(b, cams, d, fh * fw).transpose(0, 1, 3, 2)
    pos = tn.sinusoidal_embed_2d(fh, fw, d, dtype=x.dtype)
    cam = p["obs.cam_embed"].reshape(1, cams, 1, d)
    x = (x + _const(pos, p)) + cam
    img = x.reshape(b, cams * fh * fw, d)
    st = tn.linear(_const(state, p), p["obs.state_w"], p["obs.state_b"]) + p["obs.role"][1]
    return tn.concat([img, st.reshape(b, 1, d)], axis=1)


def _encoder_layer(x, p, prefix, heads):
    h = _ln(x, p, prefix + "ln1")
    x = x + tn.multihead_attention(h, h, h, p, prefix + "attn.", heads)
    return x + tn.feed_forward(_ln(x, p, prefix + "ln2"), p, prefix + "ffn.")


def cvae_encode(actions: np.ndarray, state: np.ndarray, p, cfg: BiACTConfig):
    """(mu, logvar), each (B, latent), from the normalized chunk (B, k, N) and state (B, N)."""
    b = actions.shape[0]
    d = cfg.model_dim
    cls = tn.mul(p["enc.cls"], _const(np.ones((b, 1, 1)), p))
    st = tn.linear(_const(state, p), p["enc.state_w"], p["enc.state_b"]).reshape(b, 1, d)
    act = tn.linear(_const(actions, p), p["enc.act_w"], p["enc.act_b"])
    x = tn.concat([cls, st, act], axis=1) + p["enc.pos"]
    for i in range(cfg.enc_layers):
        x = _encoder_layer(x, p, f"enc{i}.", cfg.n_heads)
    h = tn.linear(_ln(x, p, "enc.lnf")[:, 0, :], p["enc.head_w"], p["enc.head_b"])
    z = cfg.latent_dim
    return h[:, :z], h[:, z:]


def decode_chunk(obs_tokens: Tensor, z, p, cfg: BiACTConfig) -> Tensor:
    """Normalized chunk (B, k, N) from observation tokens and latent ``z`` (B, latent)."""
    b = obs_tokens.shape[0]
    d = cfg.model_dim
    zt = (tn.linear(z if isinstance(z, Tensor) else _const(z, p), p["obs.z_w"], p["obs.z_b"])
          + p["obs.role"][0]).reshape(b, 1, d)
    mem = _ln(tn.concat([zt, obs_tokens], axis=1), p, "dec.lnm")
    x = tn.mul(p["dec.query"], _const(np.ones((b, 1, 1)), p))
    for i in range(cfg.dec_layers):
        pre = f"dec{i}."
        h = _ln(x, p, pre + "ln1")
        x = x + tn.multihead_attention(h, h, h, p, pre + "self.", cfg.n_heads)
        x = x + tn.multihead_attention(_ln(x, p, pre + "ln2"), mem, mem, p, pre + "cross.", cfg.n_heads)
        x = x + tn.feed_forward(_ln(x, p, pre + "ln3"), p, pre + "ffn.")
    return tn.linear(_ln(x, p, "dec.lnf"), p["dec.head_w"], p["dec.head_b"])


def mask_state(state: np.ndarray, cfg: BiACTConfig) -> np.ndarray:
    """Zero the torque components of normalized states/actions when the force ablation is on."""
    if not cfg.force_mask:
        return state
    state = np.array(state, copy=True)
    state[..., cfg.torque_columns] = 0.0
    return state


@dataclass
class LossParts:
    total: Tensor
    l1: float
    kl: float


def loss(batch, p, cfg: BiACTConfig, eps: np.ndarray) -> LossParts:
    """L1(chunk) + beta * KL for a normalized batch ``(images, states, chunks)``.

    ``eps`` is the standard-normal draw for the reparameterized latent.
    """
    images, states, chunks = batch
    states = mask_state(states, cfg)
    mu, logvar = cvae_encode(mask_state(chunks, cfg), states, p, cfg)
    z = mu + tn.mul(tn.exp(tn.mul(logvar, 0.5)), _const(eps, p))
    pred = decode_chunk(encode_observation(images, states, p, cfg), z, p, cfg)
    l1 = tn.l1_loss(pred, _const(chunks, p))
    kl = tn.kl_gaussian(mu, logvar)
    total = l1 + tn.mul(kl, cfg.beta) if cfg.beta else l1
    return LossParts(total, float(l1.data), float(kl.data))


def predict(images, states, p, cfg: BiACTConfig) -> np.ndarray:
    """Inference forward pass with the prior mean z = 0; returns normalized (B, k, N)."""
    states = mask_state(states, cfg)
    z = np.zeros((states.shape[0], cfg.latent_dim))
    return decode_chunk(encode_observation(images, states, p, cfg), z, p, cfg).data


# ---------------------------------------------------------------- dataset

@dataclass
class ChunkDataset:
    """Flat (observation, chunk) samples drawn from paired DABI sequences.

    Frames are kept once in ``frames``; samples reference them by index.
    """
    frames: np.ndarray  # (F, H, W, 3) uint8
    frame_idx: np.ndarray  # (S, cams)
    states: np.ndarray  # (S, N) follower state, raw units
    chunks: np.ndarray  # (S, k, N) leader rows, raw units
    sequence: np.ndarray = field(default=None)  # (S,) source sequence number

    def __len__(self):
        return len(self.states)

    def batch(self, idx, stats: NormStats, dtype=np.float32):
        imgs = self.frames[self.frame_idx[idx]]
        st = normalize(self.states[idx], stats.state_mean, stats.state_std).astype(dtype)
        ch = normalize(self.chunks[idx], stats.action_mean, stats.action_std).astype(dtype)
        return imgs, st, ch


def chunk_rows(leader: np.ndarray, k: int) -> np.ndarray:
    """(T, k, N): rows t..t+k-1 for every t, padding past the end with the last row."""
    t = len(leader)
    idx = np.minimum(np.arange(t)[:, None] + np.arange(k)[None, :], t - 1)
    return leader[idx]


def build_dataset(sequences, k: int) -> ChunkDataset:
    if not sequences:
        raise ConfigurationError("no training sequences")
    pools, base = {}, 0
    frames, fidx, states, chunks, seq_no = [], [], [], [], []
    for i, seq in enumerate(sequences):
        if seq.frame_refs is None:
            raise ConfigurationError(f"sequence {seq.episode_id}/{seq.offset} has no paired frames")
        ep = seq.episode
        key = id(ep)
        if key not in pools:
            pools[key] = base
            frames.append(ep.frame_pixels)
            base += ep.n_frames
        fidx.append(seq.frame_refs + pools[key])
        states.append(seq.follower_states())
        chunks.append(chunk_rows(seq.leader_states(), k))
        seq_no.append(np.full(len(seq), i))
    return ChunkDataset(np.concatenate(frames), np.concatenate(fidx), np.concatenate(states),
                        np.concatenate(chunks), np.concatenate(seq_no))


# ---------------------------------------------------------------- model

@dataclass
class PolicyModel:
    config: BiACTConfig
    stats: NormStats
    params: tn.ParamStore

    def save(self, path) -> Path:
        arrays = dict(self.params.state_arrays())
        arrays.update(self.stats.arrays())
        return tn.save_weights(path, self.config.to_text(), arrays)

    @classmethod
    def load(cls, path) -> "PolicyModel":
        try:
            text, arrays = tn.load_weights(path)
        except FileNotFoundError:
            raise
        try:
            cfg = BiACTConfig.from_text(text)
        except (ValueError, KeyError) as exc:
            raise FormatError(f"model config block is malformed: {exc}", 10) from None
        try:
            stats = NormStats(*(arrays.pop(f"norm.{n}") for n in
                                ("state_mean", "state_std", "action_mean", "action_std")))
        except KeyError:
            raise FormatError("model file carries no normalization statistics", 0) from None
        store = init_params(cfg)
        if list(arrays) != list(store):
            raise FormatError("model parameters do not match its config", 0)
        for name, arr in arrays.items():
            if arr.shape != store[name].shape:
                raise FormatError(f"parameter {name} has shape {arr.shape}, expected {store[name].shape}", 0)
            store[name].data = arr
        return cls(cfg, stats, store)

    def infer_chunk(self, frames, follower_state) -> np.ndarray:
        """Denormalized (k, N) leader chunk for one observation.

        ``frames`` is (cams, H, W, 3) uint8; ``follower_state`` is (N,) raw.
        """
        cfg = self.config
        follower_state = np.asarray(follower_state)
        if follower_state.shape != (cfg.n_state,):
            raise DimensionError(f"follower state has shape {follower_state.shape}, model expects ({cfg.n_state},)")
        images = preprocess_images(np.asarray(frames)[None], cfg)
        st = normalize(follower_state, self.stats.state_mean, self.stats.state_std).astype(np.float32)[None]
        out = predict(images, st, self.params, cfg)[0]
        return denormalize(out, self.stats.action_mean, self.stats.action_std)


def infer_chunk(model: PolicyModel, frames, follower_state) -> np.ndarray:
    return model.infer_chunk(frames, follower_state)


# ---------------------------------------------------------------- training

@dataclass
class TrainHistory:
    step_loss: list = field(default_factory=list)  # (l1, kl) per optimizer step
    heldout_l1: list = field(default_factory=list)  # one entry per epoch, index 0 = before training
    seconds: float = 0.0


def heldout_l1(model: PolicyModel, data: ChunkDataset, batch_size: int = 128) -> float:
    cfg = model.config
    total, count = 0.0, 0
    for lo in range(0, len(data), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(data)))
        imgs, st, ch = data.batch(idx, model.stats)
        pred = predict(preprocess_images(imgs, cfg), st, model.params, cfg)
        total += float(np.abs(pred - ch).sum())
        count += ch.size
    return total / count


def train(train_data: ChunkDataset, cfg: BiACTConfig, heldout: ChunkDataset | None = None,
          stats: NormStats | None = None, max_steps: int | None = None) -> tuple[PolicyModel, TrainHistory]:
    """Adam on L1 + beta*KL with a seeded, fixed batch order."""
    if train_data.states.shape[1] != cfg.n_state or train_data.chunks.shape[1] != cfg.k:
        raise ConfigurationError(f"dataset has N={train_data.states.shape[1]}, k={train_data.chunks.shape[1]}; "
                                 f"config expects N={cfg.n_state}, k={cfg.k}")
    if train_data.frame_idx.shape[1] != cfg.n_cameras or train_data.frames.shape[1:3] != cfg.image_size:
        raise ConfigurationError("dataset camera count or image size does not match the config")
    stats = stats or NormStats.fit(train_data.states, train_data.chunks)
    model = PolicyModel(cfg, stats, init_params(cfg))
    hist = TrainHistory()
    if heldout is not None:
        hist.heldout_l1.append(heldout_l1(model, heldout))
    rng = np.random.default_rng([cfg.seed, 1])
    t0 = time.perf_counter()
    steps = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_data))
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            imgs, st, ch = train_data.batch(idx, stats)
            eps = rng.standard_normal((len(idx), cfg.latent_dim)).astype(np.float32)
            model.params.zero_grad()
            parts = loss((preprocess_images(imgs, cfg), st, ch), model.params, cfg, eps)
            tn.backward(parts.total)
            tn.adam_step(model.params, cfg.lr)
            hist.step_loss.append((parts.l1, parts.kl))
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        if heldout is not None:
            hist.heldout_l1.append(heldout_l1(model, heldout))
        log.info("epoch %d: train l1 %.4f kl %.4f%s", epoch, parts.l1, parts.kl,
                 f" heldout l1 {hist.heldout_l1[-1]:.4f}" if heldout is not None else "")
        if max_steps is not None and steps >= max_steps:
            break
    hist.seconds = time.perf_counter() - t0
    return model, hist


# ---------------------------------------------------------------- gradient check

MICRO_CONFIG = BiACTConfig(n_state=6, k=3, latent_dim=4, model_dim=8, n_heads=2, enc_layers=1, dec_layers=1,
                           ffn_dim=12, conv_channels=(3, 4), image_size=(16, 16), n_cameras=2, beta=10.0, seed=3)
GRADCHECK_FLOOR = 1e-4


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst_param: str
    n_checked: int


def gradcheck(cfg: BiACTConfig = MICRO_CONFIG, batch: int = 2, h: float = 1e-5, seed: int = 0,
              floor: float = GRADCHECK_FLOOR) -> GradcheckResult:
    """Compare backprop gradients of the full loss with central differences, in float64.

    Relative error is ``|a - n| / max(|a| + |n|, floor)``; every scalar of every
    parameter is perturbed.
    """
    rng = np.random.default_rng(seed)
    p = init_params(cfg, dtype=np.float64)
    for name, t in p.items():  # move LN/bias params off their symmetric init so every path is exercised
        t.data = t.data + rng.normal(0, 0.1, t.shape)
    imgs = rng.integers(0, 256, (batch, cfg.n_cameras, *cfg.image_size, 3), dtype=np.uint8)
    images = imgs.transpose(0, 1, 4, 2, 3) / 255.0 - 0.5
    states = rng.normal(size=(batch, cfg.n_state))
    chunks = rng.normal(size=(batch, cfg.k, cfg.n_state))
    eps = rng.normal(size=(batch, cfg.latent_dim))
    data = (images, states, chunks)

    def f():
        return float(loss(data, p, cfg, eps).total.data)

    p.zero_grad()
    tn.backward(loss(data, p, cfg, eps).total)
    worst, worst_name, n = 0.0, "", 0
    for name, t in p.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            num = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a) + abs(num), floor)
            n += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradcheckResult(worst, worst_name, n)


def config_for_task(task, **overrides) -> BiACTConfig:
    wc = task.world_config()
    base = BiACTConfig(n_state=task.state_dim, image_size=wc.image_size, n_cameras=wc.n_cameras)
    return replace(base, **overrides) if overrides else base


__all__ = [
    "BiACTConfig", "NormStats", "normalize", "denormalize", "init_params", "preprocess_images",
    "encode_observation", "cvae_encode", "decode_chunk", "loss", "predict", "ChunkDataset", "chunk_rows",
    "build_dataset", "PolicyModel", "infer_chunk", "train", "heldout_l1", "gradcheck", "GradcheckResult",
    "MICRO_CONFIG", "config_for_task", "mask_state",
]
