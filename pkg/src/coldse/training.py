"""Cold-diffusion training: the plain step, the unfolded step and the outer loop.

Random streams are split three ways from the run seed: severities
(``t`` and ``t'``), crops (utterance choice and offset), and weight
initialisation. Both step kinds draw ``t`` *and* ``t'`` every iteration, so
``cd`` and ``unfolded`` runs with one seed see the same ``t`` sequence.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from coldse.data import UtterancePair
from coldse.degradation import degrade, degrade_reanchored, reanchor_coefficients
from coldse.errors import ConfigurationError, InvalidParameterError, NumericError, ShapeError
from coldse.metrics import si_sdr_db
from coldse.restoration import DenoiserNet, Restorer, save_checkpoint, sgd_update
from coldse.sampling import SamplerConfig, improved_sampling
from coldse.schedule import Schedule, make_cosine_schedule

log = logging.getLogger(__name__)

MODES = ("cd", "unfolded")
GRAD_POLICIES = ("stop_gradient", "full_unroll")


def l1_loss(a, b) -> float:
    """Mean absolute difference over every sample (and every batch row)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"l1_loss shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def l1_grad(a, b) -> np.ndarray:
    """d l1_loss / d a, with subgradient 0 at ties."""
    a = np.asarray(a)
    return np.sign(a - np.asarray(b)) / a.size


def draw_severities(rng: np.random.Generator, T: int, batch: Optional[int] = None):
    """``t ~ U{1..T}`` then ``t' ~ U{1..t}``; scalar when ``batch`` is None."""
    t = rng.integers(1, T + 1, size=batch)
    tp = rng.integers(1, t + 1)
    if batch is None:
        return int(t), int(tp)
    return t, tp


# -- losses for any restorer ------------------------------------------------


def cd_loss(R: Restorer, x0, xT, schedule: Schedule, t) -> float:
    x_t = degrade(x0, xT, schedule, t)
    return l1_loss(R.restore(x_t, t), x0)


def unfolded_loss(R: Restorer, x0, xT, schedule: Schedule, t, tp) -> Tuple[float, float]:
    _check_tp(t, tp)
    x_t = degrade(x0, xT, schedule, t)
    x0_hat = np.asarray(R.restore(x_t, t), dtype=np.float64)
    x_tp = degrade_reanchored(x0_hat, x_t, schedule, t, tp)
    x0_hathat = R.restore(x_tp, tp)
    return l1_loss(x0_hat, x0), l1_loss(x0_hathat, x0)


def _check_tp(t, tp) -> None:
    t = np.asarray(t)
    tp = np.asarray(tp)
    if np.any(tp < 1) or np.any(tp > t):
        raise AssertionError(f"t' must satisfy 1 <= t' <= t (t={t}, t'={tp})")


# -- gradients for the trainable net ---------------------------------------


def cd_gradients(model: DenoiserNet, x0, xT, schedule: Schedule, t):
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = degrade(x0, xT, schedule, t)
    out, cache = model.forward(x_t, t)
    loss = l1_loss(out, x0)
    grads, _ = model.backward(cache, l1_grad(out, x0))
    return loss, grads


def unfolded_gradients(model: DenoiserNet, x0, xT, schedule: Schedule, t, tp, policy: str = "stop_gradient"):
    """Loss pair and summed gradients of the two-step unfolded objective.

    ``stop_gradient`` treats the first estimate as a constant when it is
    re-degraded; ``full_unroll`` also differentiates through that
    re-degradation into the first restorer call.
    """
    if policy not in GRAD_POLICIES:
        raise InvalidParameterError(f"unknown gradient policy {policy!r}")
    _check_tp(t, tp)
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = degrade(x0, xT, schedule, t)
    out1, cache1 = model.forward(x_t, t)
    x0_hat = np.asarray(out1, dtype=np.float64)
    x_tp = degrade_reanchored(x0_hat, x_t, schedule, t, tp)
    out2, cache2 = model.forward(x_tp, tp)
    loss1 = l1_loss(out1, x0)
    loss2 = l1_loss(out2, x0)
    g_out1 = l1_grad(out1, x0)
    grads2, g_in2 = model.backward(cache2, l1_grad(out2, x0))
    if policy == "full_unroll":
        # x_tp = sa_tp * x0_hat + c * (x_t - sa_t * x0_hat)
        sa_tp, c, sa_t = reanchor_coefficients(schedule, t, tp, x_t.ndim)
        g_out1 = g_out1 + (sa_tp - c * sa_t) * g_in2
    grads1, _ = model.backward(cache1, g_out1)
    grads = [g1 + g2 for g1, g2 in zip(grads1, grads2)]
    return (loss1, loss2), grads


def cd_train_step(model: DenoiserNet, x0, xT, schedule: Schedule, rng: np.random.Generator, lr: float):
    """One plain cold-diffusion SGD step. ``x0``/``xT`` are ``(N,)`` or ``(B, N)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    t, _ = draw_severities(rng, schedule.T, None if x0.ndim == 1 else x0.shape[0])
    loss, grads = cd_gradients(model, x0, xT, schedule, t)
    sgd_update(model, grads, lr)
    return loss, model


def unfolded_train_step(
    model: DenoiserNet,
    x0,
    xT,
    schedule: Schedule,
    rng: np.random.Generator,
    lr: float,
    policy: str = "stop_gradient",
):
    """One unfolded SGD step; returns ``((loss1, loss2), model)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    t, tp = draw_severities(rng, schedule.T, None if x0.ndim == 1 else x0.shape[0])
    losses, grads = unfolded_gradients(model, x0, xT, schedule, t, tp, policy)
    sgd_update(model, grads, lr)
    return losses, model


# -- outer loop -------------------------------------------------------------


@dataclass
class TrainConfig:
    n_iter: int = 20_000
    batch_size: int = 16
    lr: float = 1e-3
    T: int = 50
    s: float = 0.008
    mode: str = "unfolded"
    grad_policy: str = "stop_gradient"
    seed: int = 0
    valid_every: int = 1000
    crop_seconds: float = 1.0
    frame_len: int = 256
    hidden: int = 512
    depth: int = 3
    emb_dim: int = 128
    dtype: str = "float64"

    def validate(self) -> None:
        if self.n_iter < 1:
            raise ConfigurationError("n_iter must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.grad_policy not in GRAD_POLICIES:
            raise ConfigurationError(f"grad_policy must be one of {GRAD_POLICIES}")
        if self.valid_every < 0:
            raise ConfigurationError("valid_every must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("dtype must be float32 or float64")

    def schedule(self) -> Schedule:
        return make_cosine_schedule(self.T, self.s)


@dataclass
class TrainRecord:
    losses: List[Tuple[int, float, Optional[float], float]] = field(default_factory=list)
    validation: List[dict] = field(default_factory=list)
    best_iter: Optional[int] = None
    best_si_sdr: Optional[float] = None

    def loss_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss1", "loss2", "total"])
            for it, l1, l2, tot in self.losses:
                w.writerow([it, repr(l1), "" if l2 is None else repr(l2), repr(tot)])

    def validation_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"history": self.validation, "best_iter": self.best_iter, "best_si_sdr": self.best_si_sdr},
                fh,
                indent=2,
            )


def _stack_crops(clean, noisy, rng: np.random.Generator, batch: int, crop_len: int):
    x0 = np.zeros((batch, crop_len))
    xT = np.zeros((batch, crop_len))
    for b in range(batch):
        i = int(rng.integers(len(clean)))
        n = clean[i].shape[0]
        if n <= crop_len:
            x0[b, :n] = clean[i]
            xT[b, :n] = noisy[i]
        else:
            off = int(rng.integers(0, n - crop_len + 1))
            x0[b] = clean[i][off : off + crop_len]
            xT[b] = noisy[i][off : off + crop_len]
    return x0, xT


def validation_si_sdr(model: Restorer, pairs: Sequence[UtterancePair], schedule: Schedule) -> float:
    """Mean SI-SDR of improved (re-anchored) sampling over ``pairs``."""
    cfg = SamplerConfig(method="improved", variant="reanchored")
    lengths = {len(p.noisy) for p in pairs}
    if len(lengths) == 1:
        y = np.stack([p.noisy.samples for p in pairs])
        out, _ = improved_sampling(model, y, schedule, cfg)
        outs = list(out)
    else:
        outs = [improved_sampling(model, p.noisy.samples, schedule, cfg)[0] for p in pairs]
    return float(np.mean([si_sdr_db(p.clean.samples, o) for p, o in zip(pairs, outs)]))


def train_loop(
    config: TrainConfig,
    train_pairs: Sequence[UtterancePair],
    valid_pairs: Sequence[UtterancePair] = (),
    progress: Optional[Callable[[int, float], None]] = None,
) -> Tuple[DenoiserNet, TrainRecord]:
    """Train a :class:`DenoiserNet`; returns the best-validation model and the record.

    Without validation pairs the final model is returned.
    """
    config.validate()
    if not train_pairs:
        raise ConfigurationError("training set is empty")
    rates = {p.sample_rate for p in train_pairs} | {p.sample_rate for p in valid_pairs}
    if len(rates) != 1:
        raise ConfigurationError(f"mixed sample rates in data: {sorted(rates)}")
    sample_rate = rates.pop()
    schedule = config.schedule()
    step_ss, crop_ss, init_ss = np.random.SeedSequence(config.seed).spawn(3)
    step_rng = np.random.default_rng(step_ss)
    crop_rng = np.random.default_rng(crop_ss)
    model = DenoiserNet.initialize(
        np.random.default_rng(init_ss),
        frame_len=config.frame_len,
        hidden=config.hidden,
        depth=config.depth,
        emb_dim=config.emb_dim,
        dtype=np.dtype(config.dtype).type,
    )
    model.sample_rate = sample_rate
    model.schedule_T = config.T
    model.schedule_s = config.s

    clean = [p.clean.samples for p in train_pairs]
    noisy = [p.noisy.samples for p in train_pairs]
    crop_len = max(1, int(round(config.crop_seconds * sample_rate)))
    record = TrainRecord()
    best = model.copy()

    def validate(it: int) -> None:
        nonlocal best
        if not valid_pairs:
            return
        score = validation_si_sdr(model, valid_pairs, schedule)
        record.validation.append({"iter": it, "si_sdr": score})
        log.info("iter %d: validation SI-SDR %.3f dB", it, score)
        if record.best_si_sdr is None or score > record.best_si_sdr:
            record.best_si_sdr = score
            record.best_iter = it
            best = model.copy()

    validate(0)
    t_start = time.perf_counter()
    for it in range(1, config.n_iter + 1):
        x0, xT = _stack_crops(clean, noisy, crop_rng, config.batch_size, crop_len)
        t, tp = draw_severities(step_rng, schedule.T, config.batch_size)
        if config.mode == "cd":
            loss1, grads = cd_gradients(model, x0, xT, schedule, t)
            loss2 = None
        else:
            (loss1, loss2), grads = unfolded_gradients(model, x0, xT, schedule, t, tp, config.grad_policy)
        try:
            sgd_update(model, grads, config.lr)
        except NumericError as exc:
            raise NumericError(f"iteration {it}: {exc}") from exc
        total = loss1 + (loss2 or 0.0)
        record.losses.append((it, loss1, loss2, total))
        if progress is not None:
            progress(it, total)
        if config.valid_every and it % config.valid_every == 0:
            validate(it)
        elif it % 500 == 0:
            log.info("iter %d: loss %.5f (%.1fs)", it, total, time.perf_counter() - t_start)
    if valid_pairs and (not config.valid_every or config.n_iter % config.valid_every):
        validate(config.n_iter)
    if not valid_pairs:
        best = model.copy()
        record.best_iter = config.n_iter
    return best, record


def write_training_outputs(out_dir, model: DenoiserNet, record: TrainRecord) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "checkpoint": out / "best.npz",
        "losses": out / "losses.csv",
        "validation": out / "validation.json",
    }
    save_checkpoint(paths["checkpoint"], model)
    record.loss_csv(paths["losses"])
    record.validation_json(paths["validation"])
    return paths
