"""Noise-likelihood-augmented loss, Adam, and the early-stopped training loop."""
from __future__ import annotations

import contextlib
import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np
import torch

from .image import NormalizationStats, as_grid, check_same_shape, compute_dataset_stats
from .net import Checkpoint, ConfigMismatchError, NetworkConfig, forward, init
from .noise import NoiseSpec, log_likelihood

FIT_MODES = ("rms", "frobenius", "mse")


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = -10.0
    learning_rate: float = 1e-3
    max_epochs: int = 60
    patience: int = 10
    batch_size: int = 8
    patch_size: int = 64
    seed: int = 0
    fit: str = "rms"
    min_delta: float = 1e-6
    threads: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience and batch_size must be >= 1")
        if self.lam > 0:
            raise ValueError("lambda must be <= 0: the likelihood term is maximized")
        if self.fit not in FIT_MODES:
            raise ValueError(f"fit must be one of {FIT_MODES}")


@dataclass
class LossBreakdown:
    fit_term: float | torch.Tensor
    noise_term: float | torch.Tensor
    total: float | torch.Tensor


def fit_term(p, n, mode: str = "rms"):
    diff = p - n
    sq = (diff * diff).sum()
    m = diff.numel() if isinstance(diff, torch.Tensor) else diff.size
    if mode == "mse":
        return sq / m
    norm = sq.sqrt() if isinstance(sq, torch.Tensor) else math.sqrt(float(sq))
    return norm / math.sqrt(m) if mode == "rms" else norm


def loss(p, n, g, spec: NoiseSpec, lam: float = -10.0, fit: str = "rms") -> LossBreakdown:
    """``fit(P - N) + lam * mean log-likelihood(P - G)``.

    numpy inputs give floats; torch inputs give differentiable tensors.
    """
    if not (tuple(p.shape) == tuple(n.shape) == tuple(g.shape)):
        raise ValueError(f"dimension mismatch: {tuple(p.shape)}, {tuple(n.shape)}, {tuple(g.shape)}")
    f = fit_term(p, n, fit)
    nt = log_likelihood(p - g, g, spec)
    return LossBreakdown(f, nt, f + lam * nt)


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence, grads: Sequence, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    Works on numpy arrays or torch tensors.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    m_prev = state.m or [0.0 * g for g in grads]
    v_prev = state.v or [0.0 * g for g in grads]
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for i, (p, g, m, v) in enumerate(zip(params, grads, m_prev, v_prev)):
        if tuple(p.shape) != tuple(g.shape) or tuple(m.shape) != tuple(g.shape):
            raise ValueError(f"shape mismatch at parameter {i}: {tuple(p.shape)} vs {tuple(g.shape)}")
        finite = torch.isfinite(g).all() if isinstance(g, torch.Tensor) else np.isfinite(g).all()
        if not bool(finite):
            raise NonFiniteError(f"non-finite gradient at parameter {i}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params.append(p - lr * m_hat / (v_hat ** 0.5 + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v)


class EarlyStopping:
    """Track the best validation loss; stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.best_state = None
        self.stale = 0

    def update(self, epoch: int, value: float, state=None) -> bool:
        """Record one epoch; returns True when training should stop."""
        if value < self.best - self.min_delta:
            self.best, self.best_epoch, self.stale = value, epoch, 0
            self.best_state = copy.deepcopy(state)
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass(frozen=True)
class Triplet:
    image_id: str
    low: np.ndarray
    noisy: np.ndarray
    truth: np.ndarray


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    fit_train: float
    noise_train: float
    fit_val: float
    noise_val: float
    total_val: float
    best_so_far: float

    def csv_line(self) -> str:
        return ",".join([str(self.epoch)] + [repr(float(x)) for x in (
            self.fit_train, self.noise_train, self.fit_val, self.noise_val, self.total_val, self.best_so_far)])


TRACE_HEADER = "epoch,fit_train,noise_train,fit_val,noise_val,total_val,best_so_far"


@dataclass
class TrainingTrace:
    records: list[EpochRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path: str | Path) -> None:
        Path(path).write_text("\n".join([TRACE_HEADER] + [r.csv_line() for r in self.records]) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainingTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), *(float(r[k]) for k in TRACE_HEADER.split(",")[1:]))
                    for r in rows])


@contextlib.contextmanager
def torch_threads(threads: int):
    """``threads == 0`` is the single-threaded, bit-reproducible reference mode."""
    old_threads = torch.get_num_threads()
    old_det = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(max(1, threads))
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(old_threads)
        torch.use_deterministic_algorithms(old_det)


def _check_triplets(triplets: Sequence[Triplet], k: int, split: str) -> None:
    if not triplets:
        raise ValueError(f"empty {split} split")
    for t in triplets:
        check_same_shape(t.noisy, t.truth)
        if (t.low.shape[0] * k, t.low.shape[1] * k) != t.noisy.shape:
            raise ValueError(f"{t.image_id}: low-res {t.low.shape} is not 1/{k} of {t.noisy.shape}")


def _tensor(arrays, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.stack(arrays)[:, None], dtype=dtype)


def batch_loss(out, noisy, truth, spec: NoiseSpec, cfg: TrainConfig):
    """Mean over the batch of per-image loss terms."""
    terms = [loss(out[i, 0], noisy[i, 0], truth[i, 0], spec, cfg.lam, cfg.fit) for i in range(out.shape[0])]
    fit = torch.stack([t.fit_term for t in terms])
    noise = torch.stack([t.noise_term for t in terms])
    return fit, noise, (fit + cfg.lam * noise).mean()


def evaluate_loss(model, triplets: Sequence[Triplet], spec: NoiseSpec, cfg: TrainConfig):
    """Mean (fit, noise, total) over full images, without gradients."""
    fits, noises = [], []
    with torch.no_grad():
        for t in triplets:
            out = model(_tensor([t.low]))
            fit, noise, _ = batch_loss(out, _tensor([t.noisy]), _tensor([t.truth]), spec, cfg)
            fits.append(float(fit[0]))
            noises.append(float(noise[0]))
    fit, noise = math.fsum(fits) / len(fits), math.fsum(noises) / len(noises)
    return fit, noise, fit + cfg.lam * noise


def _patch_size(triplets: Sequence[Triplet], size: int, k: int) -> int:
    smallest = min(min(t.noisy.shape) for t in triplets)
    size = min(size, smallest)
    return size - size % k


def sample_patches(triplets: Sequence[Triplet], order: np.ndarray, size: int, k: int,
                   rng: np.random.Generator):
    """Aligned HR patches of ``size`` (and matching LR patches) for ``order``."""
    lows, noisy, truth = [], [], []
    s = size // k
    for idx in order:
        t = triplets[idx]
        h, w = t.low.shape
        r = int(rng.integers(0, h - s + 1))
        c = int(rng.integers(0, w - s + 1))
        lows.append(t.low[r:r + s, c:c + s])
        noisy.append(t.noisy[k * r:k * (r + s), k * c:k * (c + s)])
        truth.append(t.truth[k * r:k * (r + s), k * c:k * (c + s)])
    return _tensor(lows), _tensor(noisy), _tensor(truth)


def train(train_set: Sequence[Triplet], val_set: Sequence[Triplet], spec: NoiseSpec,
          net_config: NetworkConfig, cfg: TrainConfig = TrainConfig(),
          stats: NormalizationStats | None = None,
          progress: TextIO | None = None) -> tuple[Checkpoint, TrainingTrace]:
    """Train from seeded initialization and return the best-validation checkpoint.

    ``stats`` defaults to pooled statistics of the training low-res inputs.
    One CSV line per epoch goes to ``progress`` when given.
    """
    k = net_config.factor
    _check_triplets(train_set, k, "train")
    _check_triplets(val_set, k, "validation")
    if stats is None:
        stats = compute_dataset_stats(t.low for t in train_set)
    size = _patch_size(train_set, cfg.patch_size, k)
    if size < k * net_config.kernel_size:
        raise ValueError(f"training images too small for the {net_config.kernel_size}x{net_config.kernel_size} kernel")

    with torch_threads(cfg.threads):
        model = init(net_config, stats)
        params = list(model.parameters())
        rng = np.random.default_rng(cfg.seed)
        adam = AdamState()
        stopper = EarlyStopping(cfg.patience, cfg.min_delta)
        trace = TrainingTrace()
        if progress is not None:
            print(TRACE_HEADER, file=progress, flush=True)

        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(len(train_set))
            fit_sum = noise_sum = 0.0
            for b, start in enumerate(range(0, len(order), cfg.batch_size), start=1):
                low, noisy, truth = sample_patches(train_set, order[start:start + cfg.batch_size], size, k, rng)
                model.zero_grad(set_to_none=False)
                fit, noise, total = batch_loss(model(low), noisy, truth, spec, cfg)
                if not torch.isfinite(total):
                    raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {b}")
                total.backward()
                try:
                    new, adam = adam_step([p.detach() for p in params], [p.grad for p in params], adam,
                                          cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from exc
                with torch.no_grad():
                    for p, q in zip(params, new):
                        p.copy_(q)
                fit_sum += float(fit.detach().double().sum())
                noise_sum += float(noise.detach().double().sum())

            fit_val, noise_val, total_val = evaluate_loss(model, val_set, spec, cfg)
            if not math.isfinite(total_val):
                raise NonFiniteError(f"non-finite validation loss at epoch {epoch}")
            stop = stopper.update(epoch, total_val, Checkpoint.from_model(model))
            rec = EpochRecord(epoch, fit_sum / len(order), noise_sum / len(order),
                              fit_val, noise_val, total_val, stopper.best)
            trace.records.append(rec)
            if progress is not None:
                print(rec.csv_line(), file=progress, flush=True)
            if stop:
                break

    best = stopper.best_state
    best.meta = {"epoch": stopper.best_epoch, "val_total": stopper.best,
                 "epochs_run": len(trace.records), "lam": cfg.lam, "noise": spec.kind,
                 "mu": spec.mu, "sigma": spec.sigma}
    return best, trace


def predict(ckpt: Checkpoint, low: np.ndarray, factor: int | None = None) -> np.ndarray:
    """Clipped network prediction, ``factor`` times the input size."""
    if factor is not None and factor != ckpt.config.factor:
        raise ConfigMismatchError(f"checkpoint is for factor {ckpt.config.factor}, requested {factor}")
    return forward(ckpt.build(), as_grid(low), clip=True)
