"""Restorers: maps ``(x_t, t) -> x0_hat``.

Three implementations share the :class:`Restorer` protocol:

* :class:`OracleRestorer` returns a stored clean signal (test instrument).
* :class:`IdentityRestorer` returns its input.
* :class:`DenoiserNet` is a frame-wise fully connected network with a
  sinusoidal step embedding, a tanh output and hand-written backprop.

Checkpoint layout (``.npz``, written by :func:`save_checkpoint`)::

    format_version   int, currently 1
    frame_len        F
    hidden           H
    depth            L (number of hidden layers)
    emb_dim          E
    output_activation  "tanh" | "identity"
    sample_rate      Hz the model was trained at (0 if unknown)
    schedule_T, schedule_s   schedule used for training (s = nan if unknown)
    param_names      names in the order below
    param_000 ...    arrays in the order
                     emb_W (H1, E), emb_b (H1,),
                     W1 (H1, F), b1 (H1,), ..., W{L+1} (F, H), b{L+1} (F,)

``H1`` is ``H`` when ``L >= 1`` and ``F`` otherwise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np

from coldse.errors import FormatError, InvalidParameterError, NumericError, ShapeError

CHECKPOINT_VERSION = 1


@runtime_checkable
class Restorer(Protocol):
    def restore(self, x_t: np.ndarray, t: int) -> np.ndarray: ...


def restore(model: Restorer, x_t, t) -> np.ndarray:
    return model.restore(x_t, t)


class OracleRestorer:
    """Always answers with the true clean signal."""

    def __init__(self, x0_ref):
        self.x0_ref = np.array(x0_ref, dtype=np.float64)

    def restore(self, x_t, t):
        x_t = np.asarray(x_t)
        if x_t.shape != self.x0_ref.shape:
            raise ShapeError(f"oracle holds shape {self.x0_ref.shape}, got {x_t.shape}")
        return self.x0_ref.copy()


class IdentityRestorer:
    def restore(self, x_t, t):
        return np.array(x_t, dtype=np.float64)


class CountingRestorer:
    """Wraps a restorer and counts calls; used for step-count diagnostics."""

    def __init__(self, inner: Restorer):
        self.inner = inner
        self.calls = 0

    def restore(self, x_t, t):
        self.calls += 1
        return self.inner.restore(x_t, t)

    def __getattr__(self, name):
        return getattr(self.inner, name)


def step_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of severity ``t``.

    Components are interleaved pairs ``(sin(t w_i), cos(t w_i))`` with
    ``w_i = 10000 ** (-2 i / dim)``. ``t`` may be a scalar (returns ``(dim,)``)
    or a 1-D array (returns ``(len(t), dim)``).
    """
    if int(dim) != dim or dim < 2 or dim % 2:
        raise InvalidParameterError(f"embedding dimension must be even and >= 2, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise InvalidParameterError("severity must be non-negative")
    omega = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    phase = t_arr[..., None] * omega
    out = np.empty(t_arr.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


def frame_signal(x: np.ndarray, frame_len: int) -> np.ndarray:
    """Split the last axis into non-overlapping zero-padded frames.

    ``(N,) -> (ceil(N/F), F)``; ``(B, N) -> (B, ceil(N/F), F)``.
    """
    n = x.shape[-1]
    n_frames = max(1, -(-n // frame_len))
    pad = n_frames * frame_len - n
    if pad:
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (pad,), dtype=x.dtype)], axis=-1)
    return x.reshape(x.shape[:-1] + (n_frames, frame_len))


def unframe_signal(frames: np.ndarray, n: int) -> np.ndarray:
    return frames.reshape(frames.shape[:-2] + (-1,))[..., :n]


_ACTIVATIONS = ("tanh", "identity")


@dataclass
class ForwardCache:
    frames: np.ndarray
    emb: np.ndarray
    acts: List[np.ndarray]
    n: int
    batch_shape: tuple


@dataclass
class DenoiserNet:
    """Frame-wise MLP restorer.

    Each frame of ``frame_len`` samples passes through ``depth`` tanh hidden
    layers of width ``hidden`` and a final affine layer with
    ``output_activation``. The projected step embedding is added to the first
    layer's pre-activation.
    """

    frame_len: int = 256
    hidden: int = 512
    depth: int = 3
    emb_dim: int = 128
    output_activation: str = "tanh"
    dtype: type = np.float64
    params: List[np.ndarray] = field(default_factory=list, repr=False)
    sample_rate: Optional[int] = None
    schedule_T: Optional[int] = None
    schedule_s: Optional[float] = None

    def __post_init__(self) -> None:
        if self.frame_len < 1 or self.hidden < 1 or self.depth < 0:
            raise InvalidParameterError("frame_len, hidden must be >= 1 and depth >= 0")
        if self.emb_dim < 2 or self.emb_dim % 2:
            raise InvalidParameterError(f"emb_dim must be even and >= 2, got {self.emb_dim}")
        if self.output_activation not in _ACTIVATIONS:
            raise InvalidParameterError(f"unknown activation {self.output_activation!r}")
        if self.params:
            expected = self.param_shapes()
            got = [p.shape for p in self.params]
            if got != expected:
                raise ShapeError(f"parameter shapes {got} do not match architecture {expected}")
            self.params = [np.asarray(p, dtype=self.dtype) for p in self.params]

    # -- construction ---------------------------------------------------

    @property
    def widths(self) -> List[int]:
        return [self.frame_len] + [self.hidden] * self.depth + [self.frame_len]

    def param_names(self) -> List[str]:
        names = ["emb_W", "emb_b"]
        for k in range(1, len(self.widths)):
            names += [f"W{k}", f"b{k}"]
        return names

    def param_shapes(self) -> List[tuple]:
        w = self.widths
        shapes = [(w[1], self.emb_dim), (w[1],)]
        for k in range(1, len(w)):
            shapes += [(w[k], w[k - 1]), (w[k],)]
        return shapes

    @classmethod
    def initialize(cls, seed=0, **arch) -> "DenoiserNet":
        """Glorot-uniform weights, zero biases, from ``seed`` (int or Generator)."""
        net = cls(**arch)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        params = []
        for shape in net.param_shapes():
            if len(shape) == 2:
                fan_out, fan_in = shape
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                params.append(rng.uniform(-limit, limit, size=shape).astype(net.dtype))
            else:
                params.append(np.zeros(shape, dtype=net.dtype))
        net.params = params
        return net

    @classmethod
    def zeros(cls, **arch) -> "DenoiserNet":
        net = cls(**arch)
        net.params = [np.zeros(s, dtype=net.dtype) for s in net.param_shapes()]
        return net

    def copy(self) -> "DenoiserNet":
        return DenoiserNet(
            frame_len=self.frame_len,
            hidden=self.hidden,
            depth=self.depth,
            emb_dim=self.emb_dim,
            output_activation=self.output_activation,
            dtype=self.dtype,
            params=[p.copy() for p in self.params],
            sample_rate=self.sample_rate,
            schedule_T=self.schedule_T,
            schedule_s=self.schedule_s,
        )

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    # -- forward / backward ---------------------------------------------

    def _frames_and_steps(self, x_t, t):
        x = np.asarray(x_t, dtype=np.float64)
        if x.ndim not in (1, 2):
            raise ShapeError(f"expected a signal (N,) or batch (B, N), got {x.shape}")
        if x.shape[-1] == 0:
            raise ShapeError("empty signal")
        frames = frame_signal(x, self.frame_len)
        t_arr = np.asarray(t)
        if x.ndim == 1:
            if t_arr.ndim != 0:
                raise ShapeError("a single signal takes a scalar severity")
            steps = np.full(frames.shape[0], t_arr, dtype=np.float64)
        else:
            t_rows = np.broadcast_to(t_arr, (x.shape[0],)).astype(np.float64)
            steps = np.repeat(t_rows, frames.shape[1])
        return frames, steps, x.shape[-1], x.shape[:-1]

    def forward(self, x_t, t):
        """Return ``(output, cache)``; the output has the input's shape."""
        if not self.params:
            raise InvalidParameterError("network has no parameters; use initialize() or zeros()")
        frames, steps, n, batch_shape = self._frames_and_steps(x_t, t)
        flat = frames.reshape(-1, self.frame_len).astype(self.dtype)
        emb = step_embedding(steps, self.emb_dim).astype(self.dtype)
        emb_W, emb_b = self.params[0], self.params[1]
        acts = [flat]
        n_layers = len(self.widths) - 1
        h = flat
        for k in range(n_layers):
            W, b = self.params[2 + 2 * k], self.params[3 + 2 * k]
            z = h @ W.T + b
            if k == 0:
                z = z + emb @ emb_W.T + emb_b
            last = k == n_layers - 1
            h = z if (last and self.output_activation == "identity") else np.tanh(z)
            acts.append(h)
        if not np.all(np.isfinite(h)):
            raise NumericError("non-finite activations in forward pass")
        out_frames = h.reshape(frames.shape)
        out = unframe_signal(out_frames, n)
        cache = ForwardCache(flat, emb, acts, n, batch_shape)
        return out, cache

    def backward(self, cache: ForwardCache, grad_out):
        """Gradients of ``sum(grad_out * output)``.

        Returns ``(param_grads, input_grad)`` where ``input_grad`` has the
        signal's shape.
        """
        grad_out = np.asarray(grad_out, dtype=self.dtype)
        expected = cache.batch_shape + (cache.n,)
        if grad_out.shape != expected:
            raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {expected}")
        g_frames = frame_signal(grad_out, self.frame_len).reshape(-1, self.frame_len)
        n_layers = len(self.widths) - 1
        grads: List[Optional[np.ndarray]] = [None] * len(self.params)
        acts = cache.acts
        last_tanh = self.output_activation == "tanh"
        g = g_frames
        for k in reversed(range(n_layers)):
            a = acts[k + 1]
            if k < n_layers - 1 or last_tanh:
                dz = g * (1.0 - a * a)
            else:
                dz = g
            grads[2 + 2 * k] = dz.T @ acts[k]
            grads[3 + 2 * k] = dz.sum(axis=0)
            if k == 0:
                grads[0] = dz.T @ cache.emb
                grads[1] = dz.sum(axis=0)
            g = dz @ self.params[2 + 2 * k]
        for gr in grads:
            if not np.all(np.isfinite(gr)):
                raise NumericError("non-finite gradient in backward pass")
        frames_shape = cache.batch_shape + (-1, self.frame_len)
        input_grad = unframe_signal(g.reshape(frames_shape), cache.n)
        return grads, input_grad

    def restore(self, x_t, t):
        out, _ = self.forward(x_t, t)
        return np.asarray(out, dtype=np.float64)


def forward_backward(model: DenoiserNet, x_t, t, grad_out) -> List[np.ndarray]:
    """Parameter gradients of ``grad_out . model.restore(x_t, t)``."""
    _, cache = model.forward(x_t, t)
    grads, _ = model.backward(cache, grad_out)
    return grads


def sgd_update(model: DenoiserNet, grads: Sequence[np.ndarray], lr: float) -> DenoiserNet:
    """In-place ``theta <- theta - lr * grad``; rejects the whole update on bad input."""
    if not lr >= 0:
        raise InvalidParameterError(f"learning rate must be non-negative, got {lr}")
    if len(grads) != len(model.params):
        raise ShapeError(f"got {len(grads)} gradients for {len(model.params)} parameters")
    for p, g in zip(model.params, grads):
        if np.shape(g) != p.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; update rejected")
    updated = [p - lr * np.asarray(g, dtype=p.dtype) for p, g in zip(model.params, grads)]
    if not all(np.all(np.isfinite(u)) for u in updated):
        raise NumericError("update produced non-finite parameters; rejected")
    model.params = updated
    return model


# -- checkpoints ----------------------------------------------------------

PathLike = Union[str, os.PathLike]


def save_checkpoint(path: PathLike, model: DenoiserNet) -> None:
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "frame_len": np.array(model.frame_len),
        "hidden": np.array(model.hidden),
        "depth": np.array(model.depth),
        "emb_dim": np.array(model.emb_dim),
        "output_activation": np.array(model.output_activation),
        "sample_rate": np.array(model.sample_rate or 0),
        "schedule_T": np.array(model.schedule_T or 0),
        "schedule_s": np.array(np.nan if model.schedule_s is None else model.schedule_s),
        "dtype": np.array(np.dtype(model.dtype).name),
        "param_names": np.array(model.param_names()),
    }
    for i, p in enumerate(model.params):
        arrays[f"param_{i:03d}"] = p
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: PathLike) -> DenoiserNet:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        try:
            version = int(data["format_version"])
            if version != CHECKPOINT_VERSION:
                raise FormatError(f"checkpoint format_version {version} unsupported")
            sr = int(data["sample_rate"])
            T = int(data["schedule_T"])
            s = float(data["schedule_s"])
            net = DenoiserNet(
                frame_len=int(data["frame_len"]),
                hidden=int(data["hidden"]),
                depth=int(data["depth"]),
                emb_dim=int(data["emb_dim"]),
                output_activation=str(data["output_activation"]),
                dtype=np.dtype(str(data["dtype"])).type,
                sample_rate=sr or None,
                schedule_T=T or None,
                schedule_s=None if np.isnan(s) else s,
            )
            n = len(net.param_shapes())
            net.params = [np.array(data[f"param_{i:03d}"]) for i in range(n)]
        except KeyError as exc:
            raise FormatError(f"checkpoint {path} is missing field {exc}") from exc
    net.__post_init__()
    return net
