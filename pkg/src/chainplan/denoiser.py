"""Feed-forward clean-chunk predictor with a latest/EMA parameter pair.

The model maps a flattened noisy chunk plus a sinusoidal time embedding to
an estimate of the clean chunk. Training minimises the squared clean-data
prediction error with Adam; an exponential moving average of the
parameters provides the second head used by the guided sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradtape as gt
from .schedule import NoiseSchedule, noise_forward

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


def time_embed(t, T: int, dim: int) -> np.ndarray:
    """Interleaved sin/cos features of t/T at geometrically spaced frequencies.

    ``t`` may be a scalar or an array; the embedding axis is appended last.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.geomspace(1.0, 100.0, half)
    phase = np.multiply.outer(np.asarray(t, dtype=np.float64) / T, 2.0 * np.pi * freqs)
    out = np.empty(phase.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


@dataclass
class Denoiser:
    """MLP over [flattened chunk, time embedding] -> flattened clean chunk."""

    chunk_frames: int
    frame_dim: int
    time_dim: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    nonlinearity: str = "silu"

    @property
    def chunk_dim(self) -> int:
        return self.chunk_frames * self.frame_dim

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def copy(self) -> "Denoiser":
        return Denoiser(self.chunk_frames, self.frame_dim, self.time_dim,
                        [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.nonlinearity)


def init_denoiser(chunk_frames: int, frame_dim: int, hidden=(256, 256, 256),
                  time_dim: int = 16, rng=None, nonlinearity: str = "silu") -> Denoiser:
    """He-initialised hidden layers; the output layer starts at zero."""
    rng = np.random.default_rng(0) if rng is None else rng
    dims = [chunk_frames * frame_dim + time_dim, *hidden, chunk_frames * frame_dim]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == len(dims) - 2:
            W = np.zeros((fan_in, fan_out))
        else:
            W = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return Denoiser(chunk_frames, frame_dim, time_dim, weights, biases, nonlinearity)


_NONLIN = {"silu": gt.silu, "tanh": gt.tanh}


def forward(model: Denoiser, x_flat: gt.Tensor, emb: np.ndarray,
            param_tensors=None) -> gt.Tensor:
    """Forward pass on whatever tape ``x_flat`` lives on.

    ``param_tensors``, when given, supplies taped leaves for the weights
    (training); otherwise parameters enter as constants (guidance).
    """
    act = _NONLIN[model.nonlinearity]
    if param_tensors is None:
        ws = [gt.Tensor(w) for w in model.weights]
        bs = [gt.Tensor(b) for b in model.biases]
    else:
        ws, bs = param_tensors
    h = gt.concat([x_flat, gt.Tensor(emb)], axis=1)
    for i, (W, b) in enumerate(zip(ws, bs)):
        h = gt.add(gt.matmul(h, W), b)
        if i < len(ws) - 1:
            h = act(h)
    return h


def predict_x0(model: Denoiser, x_t, t, T: int):
    """Clean-chunk estimate for a batch of noisy chunks.

    ``x_t`` is an (batch, F*d) array or taped tensor; ``t`` a scalar or
    per-row array of timesteps in [1, T]. Returns an object of the same
    flavor (array in, array out).
    """
    taped = isinstance(x_t, gt.Tensor)
    x = x_t if taped else gt.Tensor(np.asarray(x_t, dtype=np.float64))
    if x.data.ndim != 2 or x.data.shape[1] != model.chunk_dim:
        raise gt.ShapeError(f"expected (batch, {model.chunk_dim}), got {x.data.shape}")
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.data.shape[0],))
    emb = time_embed(tt, T, model.time_dim)
    out = forward(model, x, emb)
    return out if taped else out.data


@dataclass
class EmaPair:
    latest: Denoiser
    ema: Denoiser
    decay: float

    def update_ema(self):
        d = self.decay
        for pe, pl in zip(self.ema.params(), self.latest.params()):
            pe *= d
            pe += (1.0 - d) * pl


def make_pair(model: Denoiser, decay: float = 0.999) -> EmaPair:
    return EmaPair(latest=model, ema=model.copy(), decay=decay)


class Adam:
    """Standard Adam over a flat list of parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Trainer:
    pair: EmaPair
    sched: NoiseSchedule
    opt: Adam = field(default=None)
    steps_done: int = 0

    def __post_init__(self):
        if self.opt is None:
            self.opt = Adam(self.pair.latest.params())


def train_step(trainer: Trainer, batch: np.ndarray, rng: np.random.Generator) -> float:
    """One Adam update of the latest model plus an EMA update.

    ``batch`` holds clean chunks, shape (B, F, d) or (B, F*d). Timesteps
    are drawn uniformly in [1, T], noise per element.
    """
    model = trainer.pair.latest
    sched = trainer.sched
    x0 = np.asarray(batch, dtype=np.float64).reshape(len(batch), -1)
    t = rng.integers(1, sched.T + 1, size=len(x0))
    eps = rng.standard_normal(x0.shape)
    ab = sched.alpha_bar[t][:, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps

    tape = gt.Tape()
    ws = [tape.leaf(w) for w in model.weights]
    bs = [tape.leaf(b) for b in model.biases]
    x_in = tape.constant(x_t)
    emb = time_embed(t.astype(np.float64), sched.T, model.time_dim)
    pred = forward(model, x_in, emb, param_tensors=(ws, bs))
    loss = gt.tmean(gt.square(pred - tape.constant(x0)))
    loss_val = float(loss.data)
    if not np.isfinite(loss_val):
        raise TrainingDiverged(f"non-finite loss {loss_val} at step {trainer.steps_done}")
    grads = gt.backward(loss, ws + bs)
    trainer.opt.step(grads)
    trainer.pair.update_ema()
    trainer.steps_done += 1
    return loss_val


# ---------------------------------------------------------------------------
# checkpoint I/O: npz with layer shapes, both parameter sets, schedule hash


def save_checkpoint(path, pair: EmaPair, sched: NoiseSchedule, extra: dict | None = None):
    m = pair.latest
    payload = {
        "version": np.int64(CHECKPOINT_VERSION),
        "chunk_frames": np.int64(m.chunk_frames),
        "frame_dim": np.int64(m.frame_dim),
        "time_dim": np.int64(m.time_dim),
        "decay": np.float64(pair.decay),
        "nonlinearity": np.bytes_(m.nonlinearity.encode()),
        "schedule_hash": np.bytes_(sched.hash().encode()),
        "n_layers": np.int64(len(m.weights)),
    }
    for i in range(len(m.weights)):
        payload[f"latest_w{i}"] = m.weights[i]
        payload[f"latest_b{i}"] = m.biases[i]
        payload[f"ema_w{i}"] = pair.ema.weights[i]
        payload[f"ema_b{i}"] = pair.ema.biases[i]
    for k, v in (extra or {}).items():
        payload[k] = v
    np.savez(path, **payload)


class CheckpointMismatch(RuntimeError):
    pass


def load_checkpoint(path, sched: NoiseSchedule | None = None) -> EmaPair:
    z = np.load(path, allow_pickle=False)
    if int(z["version"]) != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {int(z['version'])}")
    if sched is not None and bytes(z["schedule_hash"]).decode() != sched.hash():
        raise CheckpointMismatch("checkpoint was trained under a different noise schedule")
    nl = bytes(z["nonlinearity"]).decode()
    n_layers = int(z["n_layers"])

    def build(prefix):
        return Denoiser(
            int(z["chunk_frames"]), int(z["frame_dim"]), int(z["time_dim"]),
            [z[f"{prefix}_w{i}"] for i in range(n_layers)],
            [z[f"{prefix}_b{i}"] for i in range(n_layers)], nl)

    return EmaPair(latest=build("latest"), ema=build("ema"), decay=float(z["decay"]))
