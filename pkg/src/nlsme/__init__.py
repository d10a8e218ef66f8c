"""Gradient inversion of multi-step federated client updates."""

from .attack import AttackConfig, AttackResult, run_attack
from .estimator import InversionAttack
from .fedsim import ClientConfig, Observation, simulate
from .metrics import match_batch, psnr, ssim
from .model import ImageBatch, ModelSpec

__all__ = [
    "AttackConfig",
    "AttackResult",
    "ClientConfig",
    "ImageBatch",
    "InversionAttack",
    "ModelSpec",
    "Observation",
    "match_batch",
    "psnr",
    "run_attack",
    "simulate",
    "ssim",
]
