"""FedAVG client simulation: local training from ``w0`` to ``wT``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ModelSpec, grad_params, init_params


class TrainingError(RuntimeError):
    def __init__(self, step, message="non-finite loss"):
        self.step = step
        super().__init__(f"local training aborted at step {step}: {message}")


@dataclass(frozen=True)
class ClientConfig:
    epochs: int = 1
    n: int = 10
    batch_size: int = 5
    lr: float = 0.1
    optimizer: str = "sgd"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    shuffle_seed: int = 0
    rounds: int = 1
    warmup_rounds: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 1 <= self.batch_size <= self.n:
            raise ValueError(f"batch size must be in [1, N={self.n}], got {self.batch_size}")
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.rounds < 1 or self.warmup_rounds < 0:
            raise ValueError("rounds must be >= 1 and warmup_rounds >= 0")

    @property
    def steps_per_epoch(self):
        return math.ceil(self.n / self.batch_size)

    @property
    def T(self):
        return self.epochs * self.steps_per_epoch


@dataclass(frozen=True)
class Observation:
    """What the attacker sees after one round of local training."""

    w0: np.ndarray
    wT: np.ndarray
    n: int
    spec: ModelSpec
    client: ClientConfig = field(default_factory=ClientConfig)

    @property
    def delta(self):
        """The aggregated update ``w0 - wT``."""
        return self.w0 - self.wT

    @property
    def pseudo_gradient(self):
        """``(w0 - wT) / (lr * T)``: the average step direction as a gradient."""
        return self.delta / (self.client.lr * self.client.T)


def _batches(n, batch_size, seed):
    perm = np.random.default_rng(seed).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def local_train(w0, dataset, cfg, spec, seed_offset=0):
    """Run ``cfg.T`` optimizer steps and return ``(wT, trajectory)``.

    Each epoch reshuffles with seed ``shuffle_seed + seed_offset + epoch``.
    The trajectory holds all ``T + 1`` iterates, ``w0`` first.
    """
    if len(dataset) != cfg.n:
        raise ValueError(f"dataset has {len(dataset)} samples, config says N={cfg.n}")
    w = np.array(w0, dtype=np.float64)
    trajectory = [w.copy()]
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    beta1, beta2 = cfg.betas
    step = 0
    for epoch in range(cfg.epochs):
        for idx in _batches(cfg.n, cfg.batch_size, cfg.shuffle_seed + seed_offset + epoch):
            images = dataset.images[idx]
            labels = dataset.labels[idx]
            try:
                # overflow surfaces as NonFiniteError; the numpy warning is noise
                with np.errstate(over="ignore", invalid="ignore"):
                    g = grad_params(spec, w, images, labels)
            except ad.NonFiniteError as exc:
                raise TrainingError(step) from exc
            step += 1
            with np.errstate(over="ignore", invalid="ignore"):
                if cfg.optimizer == "sgd":
                    w = w - cfg.lr * g
                else:
                    m = beta1 * m + (1 - beta1) * g
                    v = beta2 * v + (1 - beta2) * g * g
                    m_hat = m / (1 - beta1**step)
                    v_hat = v / (1 - beta2**step)
                    w = w - cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * w)
            if not np.all(np.isfinite(w)):
                raise TrainingError(step, "non-finite parameters")
            trajectory.append(w.copy())
    return w, trajectory


def _chain(w_init, dataset, cfg, spec):
    w = np.array(w_init, dtype=np.float64)
    for r in range(cfg.warmup_rounds + cfg.rounds):
        wT, trajectory = local_train(w, dataset, cfg, spec, seed_offset=r * cfg.epochs)
        if r >= cfg.warmup_rounds:
            yield Observation(w, wT, cfg.n, spec, cfg), trajectory
        w = wT


def run_rounds(w_init, dataset, cfg, spec):
    """Chain ``warmup_rounds + rounds`` local trainings; observe the last ``rounds``.

    With a single client the server average is the client's own ``wT``, so
    round ``r + 1`` starts where round ``r`` ended.
    """
    return [obs for obs, _ in _chain(w_init, dataset, cfg, spec)]


def simulate(spec, dataset, cfg, init_seed):
    """Initialize, train every round and return the final round's
    ``(observation, trajectory)``."""
    last = None
    for last in _chain(init_params(spec, init_seed), dataset, cfg, spec):
        pass
    return last


def trajectory_nonlinearity(trajectory):
    """Max distance of any iterate from the chord ``w0 -> wT``, over the chord length."""
    if len(trajectory) < 2:
        raise ValueError("trajectory needs at least two points")
    traj = np.asarray(trajectory, dtype=np.float64)
    chord = traj[-1] - traj[0]
    length2 = float(chord @ chord)
    if length2 == 0.0:
        return 0.0
    rel = traj - traj[0]
    proj = np.outer(rel @ chord / length2, chord)
    dist = np.linalg.norm(rel - proj, axis=1)
    return float(dist.max() / math.sqrt(length2))
