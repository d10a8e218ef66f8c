"""Gradient inversion attacks on a FedAVG observation ``(w0, wT, N)``.

Four variants share one optimization loop:

``dlg``
    squared distance between the pseudo-gradient ``(w0 - wT) / (lr * T)`` and
    the dummy gradient at ``w0``.
``ig``
    cosine mismatch between the same two gradients plus total variation.
``sme``
    cosine mismatch between ``w0 - wT`` and the dummy gradient taken at the
    chord point ``(1 - a) w0 + a wT``, with ``a`` learned.
``nlsme``
    the chord is replaced by a quadratic Bezier curve with a learned control
    point, and the dummy gradient is rescaled per parameter by a learned
    vector ``d`` before the cosine is taken.  ``use_nlp`` switches the
    control point on, ``use_pr`` switches on ``d`` and the two penalties.

Dummy pixels are updated with Adam.  The curve parameter, the control point
and ``d`` take plain gradient steps and are then clamped to their boxes.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ImageBatch, forward, grad_params
from .surrogate import (
    BezierTrajectory,
    LinearTrajectory,
    bezier_dP1_coeff,
    bezier_dt,
    bezier_eval,
    linear_eval,
    midpoint,
)

VARIANTS = ("dlg", "ig", "sme", "nlsme")

HISTORY_FIELDS = ("total", "Lcos", "Ltv", "Lp", "Ld", "t", "p1_offset")


class AttackError(RuntimeError):
    pass


class DegenerateGradientError(AttackError):
    def __init__(self):
        super().__init__("degenerate gradient: dummy data produces a zero gradient")


class NonFiniteLossError(AttackError):
    def __init__(self, iteration, state):
        self.iteration = iteration
        self.state = state
        super().__init__(f"non-finite attack loss at iteration {iteration}")


@dataclass(frozen=True)
class AttackConfig:
    # Defaults were tuned on 8x8 synthetic batches of ten images.  A larger
    # TV weight swamps the cosine term at that scale.
    variant: str = "nlsme"
    iterations: int = 2000
    lr: float = 0.1
    lr_t: float = 0.06
    lr_p1: float = 0.05
    lr_d: float = 0.1
    lambda_tv: float = 1e-5
    lambda_p: float = 1e-3
    lambda_d: float = 1e-4
    lambda_cls: float = 0.0
    use_nlp: bool = True
    use_pr: bool = True
    seed: int = 0
    d_bounds: tuple = (0.1, 10.0)
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    check_lr_order: bool = True

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        for name in ("lambda_tv", "lambda_p", "lambda_d", "lambda_cls"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("lr", "lr_t", "lr_p1", "lr_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        lo, hi = self.d_bounds
        if not 0 < lo <= 1 <= hi:
            raise ValueError(f"d_bounds must bracket 1, got {self.d_bounds}")
        if self.check_lr_order and not self.lr > self.lr_t > self.lr_p1:
            raise ValueError(
                f"learning rates must satisfy lr > lr_t > lr_p1, got {self.lr}, {self.lr_t}, {self.lr_p1}"
            )
        return self

    @property
    def learns_p1(self):
        return self.variant == "nlsme" and self.use_nlp

    @property
    def learns_d(self):
        return self.variant == "nlsme" and self.use_pr


@dataclass
class AttackState:
    dummy: np.ndarray
    labels: np.ndarray
    t: float
    P1: np.ndarray
    d: np.ndarray
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.dummy)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.dummy)

    @property
    def alpha(self):
        """The chord parameter; the linear variant stores it in ``t``."""
        return self.t

    def copy(self):
        return dataclasses.replace(
            self,
            dummy=self.dummy.copy(),
            P1=self.P1.copy(),
            d=self.d.copy(),
            adam_m=self.adam_m.copy(),
            adam_v=self.adam_v.copy(),
        )


@dataclass
class AttackResult:
    reconstruction: ImageBatch
    final_lsim: float
    history: list = field(default_factory=list)
    wall_time: float = 0.0
    peak_param_mem_estimate: int = 0
    best_iteration: int = 0
    final_state: AttackState = None

    def history_array(self, name):
        return np.array([row[name] for row in self.history])


# -- loss terms ---------------------------------------------------------------


def cosine_direction_loss(delta, g):
    """``1 - cos(delta, g)``; ``delta`` is fixed, ``g`` may be a tensor."""
    delta = np.asarray(delta, dtype=np.float64)
    dnorm = float(np.linalg.norm(delta))
    if dnorm == 0.0:
        raise AttackError("observation has w0 == wT; nothing to invert")
    g = ad.as_tensor(g)
    if g.shape != delta.shape:
        raise ad.ShapeError("cosine_direction_loss", delta.shape, g.shape)
    gnorm = ad.l2norm(g)
    if gnorm.data == 0.0:
        raise DegenerateGradientError()
    unit = ad.Tensor(delta / dnorm)
    return ad.subtract(1.0, ad.divide(ad.dot(unit, g), gnorm))


def tv_loss(images, eps=ad.SQRT_EPS):
    """Isotropic total variation summed over every pixel and channel.

    Forward differences past the last row/column count as zero.  The
    ``sqrt(eps)`` floor of each term is subtracted, so flat images score 0.
    """
    x = ad.as_tensor(images)
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ad.ShapeError("tv_loss", x.shape)
    shape = x.shape
    h, w = shape[2], shape[3]
    down = ad.subtract(x[:, :, 1:, :], x[:, :, :-1, :])
    right = ad.subtract(x[:, :, :, 1:], x[:, :, :, :-1])
    down = ad.scatter(down, shape, (slice(None), slice(None), slice(0, h - 1)))
    right = ad.scatter(right, shape, (slice(None), slice(None), slice(None), slice(0, w - 1)))
    sq = ad.add(ad.multiply(down, down), ad.multiply(right, right))
    total = ad.tsum(ad.sqrt_eps(sq, eps))
    return ad.subtract(total, float(np.prod(shape)) * math.sqrt(eps))


def gradient_distance(target, g):
    """Squared Euclidean distance between a target gradient and ``g``."""
    g = ad.as_tensor(g)
    diff = ad.subtract(g, ad.Tensor(np.asarray(target, dtype=np.float64)))
    return ad.dot(diff, diff)


def control_reg(P1, w0, wT):
    diff = np.asarray(P1) - midpoint(w0, wT)
    return float(diff @ diff)


def dvec_scale(g, d):
    if isinstance(g, ad.Tensor) or isinstance(d, ad.Tensor):
        if g.shape != d.shape:
            raise ad.ShapeError("dvec_scale", g.shape, d.shape)
        return ad.multiply(g, d)
    g = np.asarray(g)
    d = np.asarray(d)
    if g.shape != d.shape:
        raise ad.ShapeError("dvec_scale", g.shape, d.shape)
    return g * d


def d_reg(d):
    diff = np.asarray(d, dtype=np.float64) - 1.0
    return float(diff @ diff)


def _on_chord(cfg):
    # With a frozen control point the curve is the chord itself; evaluating
    # it in chord form keeps the reduced variant bit-identical to "sme".
    return cfg.variant == "sme" or (cfg.variant == "nlsme" and not cfg.learns_p1)


def _surrogate_point(state, observation, cfg):
    if _on_chord(cfg):
        return linear_eval(LinearTrajectory(observation.w0, observation.wT, state.t))
    return bezier_eval(BezierTrajectory(observation.w0, observation.wT, state.P1, state.t))


def _taped_objective(state, observation, cfg):
    """Record the tape-resident part of the objective.

    Returns ``(taped_loss, parts, leaves)`` where ``leaves`` maps names to
    the differentiable inputs.  The control point and ``d`` penalties are
    closed-form and added outside the tape.
    """
    spec = observation.spec
    dummy = ad.Tensor(state.dummy, requires_grad=True)
    leaves = {"dummy": dummy}
    if cfg.variant in ("dlg", "ig"):
        point = observation.w0
    else:
        point = _surrogate_point(state, observation, cfg)
    w_leaf = ad.Tensor(point, requires_grad=True)
    leaves["w"] = w_leaf
    g = grad_params(spec, w_leaf, dummy, state.labels, create_graph=True)
    parts = {}
    if cfg.variant == "dlg":
        main = gradient_distance(observation.pseudo_gradient, g)
        with ad.no_grad():
            parts["Lcos"] = cosine_direction_loss(observation.delta, g.data).item()
    else:
        if cfg.learns_d:
            d_leaf = ad.Tensor(state.d, requires_grad=True)
            leaves["d"] = d_leaf
            g = dvec_scale(g, d_leaf)
        main = cosine_direction_loss(observation.delta, g)
        parts["Lcos"] = main.item()
    taped = main
    parts["Ltv"] = 0.0
    if cfg.variant != "dlg" and cfg.lambda_tv > 0:
        tv = tv_loss(dummy)
        parts["Ltv"] = tv.item()
        taped = ad.add(taped, ad.scale(tv, cfg.lambda_tv))
    if cfg.lambda_cls > 0 and cfg.variant in ("sme", "nlsme"):
        cls = ad.cross_entropy(forward(spec, w_leaf, dummy), state.labels)
        parts["Lcls"] = cls.item()
        taped = ad.add(taped, ad.scale(cls, cfg.lambda_cls))
    return taped, parts, leaves


def _penalties(state, observation, cfg):
    if not cfg.learns_d:
        return 0.0, 0.0
    return control_reg(state.P1, observation.w0, observation.wT), d_reg(state.d)


def total_loss(state, observation, cfg):
    """Scalar objective of ``cfg.variant`` at ``state`` (no gradients)."""
    taped, parts, _ = _taped_objective(state, observation, cfg)
    lp, ld = _penalties(state, observation, cfg)
    return taped.item() + cfg.lambda_p * lp + cfg.lambda_d * ld


def nlsme_total_loss(state, observation, cfg):
    return total_loss(state, observation, dataclasses.replace(cfg, variant="nlsme"))


def sme_loss(state, observation, lambda_tv):
    cfg = AttackConfig(variant="sme", lambda_tv=lambda_tv, check_lr_order=False)
    return total_loss(state, observation, cfg)


def dlg_loss(state, observation):
    return total_loss(state, observation, AttackConfig(variant="dlg", check_lr_order=False))


def ig_loss(state, observation, lambda_tv):
    cfg = AttackConfig(variant="ig", lambda_tv=lambda_tv, check_lr_order=False)
    return total_loss(state, observation, cfg)


# -- optimization -------------------------------------------------------------


def evaluate(state, observation, cfg):
    """Objective value, its parts and the gradient for every learned variable."""
    taped, parts, leaves = _taped_objective(state, observation, cfg)
    names = list(leaves)
    grads = dict(zip(names, (g.data for g in ad.grad(taped, [leaves[n] for n in names], allow_unused=True))))
    lp = ld = 0.0
    if cfg.learns_d:
        # the closed-form penalties; their offsets are reused in the gradients
        p1_off = state.P1 - midpoint(observation.w0, observation.wT)
        d_off = state.d - 1.0
        lp = float(p1_off @ p1_off)
        ld = float(d_off @ d_off)
    parts["Lp"] = lp
    parts["Ld"] = ld
    parts["total"] = taped.item() + cfg.lambda_p * lp + cfg.lambda_d * ld
    out = {"dummy": grads["dummy"], "t": 0.0, "P1": None, "d": None}
    gw = grads["w"]
    if _on_chord(cfg):
        out["t"] = float(gw @ (observation.wT - observation.w0))
    elif cfg.variant == "nlsme":
        traj = BezierTrajectory(observation.w0, observation.wT, state.P1, state.t)
        out["t"] = float(gw @ bezier_dt(traj))
        out["P1"] = bezier_dP1_coeff(state.t) * gw
        if cfg.learns_d:
            out["P1"] += 2.0 * cfg.lambda_p * p1_off
    if cfg.learns_d:
        out["d"] = grads["d"] + 2.0 * cfg.lambda_d * d_off
    parts["mem"] = ad.graph_nbytes(taped)
    return parts, out


def project(state, cfg):
    """Clamp every variable into its feasible box (in place) and return it."""
    lo, hi = cfg.d_bounds
    np.clip(state.dummy, 0.0, 1.0, out=state.dummy)
    np.clip(state.d, lo, hi, out=state.d)
    state.t = float(min(1.0, max(0.0, state.t)))
    return state


def _apply(state, grads, cfg):
    new = state.copy()
    b1, b2 = cfg.betas
    new.step += 1
    g = grads["dummy"]
    new.adam_m = b1 * state.adam_m + (1 - b1) * g
    new.adam_v = b2 * state.adam_v + (1 - b2) * g * g
    m_hat = new.adam_m / (1 - b1**new.step)
    v_hat = new.adam_v / (1 - b2**new.step)
    new.dummy = state.dummy - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    if cfg.variant in ("sme", "nlsme"):
        new.t = state.t - cfg.lr_t * grads["t"]
    if grads["P1"] is not None:
        new.P1 = state.P1 - cfg.lr_p1 * grads["P1"]
    if grads["d"] is not None:
        new.d = state.d - cfg.lr_d * grads["d"]
    return project(new, cfg)


def attack_step(state, observation, cfg):
    """One iteration: surrogate point, dummy gradient, loss, update, projection."""
    parts, grads = evaluate(state, observation, cfg)
    if not math.isfinite(parts["total"]):
        raise NonFiniteLossError(state.step, state)
    return _apply(state, grads, cfg)


def init_state(observation, labels, cfg):
    """Uniform random pixels from ``cfg.seed``; curve at its midpoint, ``d = 1``."""
    spec = observation.spec
    rng = np.random.default_rng(cfg.seed)
    dummy = rng.uniform(0.0, 1.0, size=(observation.n, *spec.input_dims))
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (observation.n,):
        raise ValueError(f"expected {observation.n} labels, got shape {labels.shape}")
    return AttackState(
        dummy=dummy,
        labels=labels,
        t=0.5,
        P1=midpoint(observation.w0, observation.wT),
        d=np.ones_like(observation.w0),
    )


def run_attack(observation, cfg, labels, callback=None):
    """Optimize dummy data against ``observation``; keep the best-L_cos iterate."""
    cfg.validate()
    state = init_state(observation, labels, cfg)
    history = []
    best = (math.inf, 0, state.dummy)
    peak = 0
    vectors = 2 + (2 if cfg.learns_p1 else 0) + (2 if cfg.learns_d else 0)
    start = time.perf_counter()
    for it in range(cfg.iterations):
        try:
            parts, grads = evaluate(state, observation, cfg)
        except ad.NonFiniteError as exc:
            raise NonFiniteLossError(it, state) from exc
        if not math.isfinite(parts["total"]):
            raise NonFiniteLossError(it, state)
        peak = max(peak, parts.pop("mem") + vectors * observation.w0.nbytes)
        row = {k: parts[k] for k in ("total", "Lcos", "Ltv", "Lp", "Ld")}
        row["t"] = state.t
        row["p1_offset"] = float(np.linalg.norm(state.P1 - midpoint(observation.w0, observation.wT)))
        history.append(row)
        if row["Lcos"] < best[0]:
            best = (row["Lcos"], it, state.dummy)
        if callback is not None:
            callback(it, row)
        state = _apply(state, grads, cfg)
    wall = time.perf_counter() - start
    lsim, best_it, images = best
    return AttackResult(
        reconstruction=ImageBatch(images.copy(), state.labels.copy()),
        final_lsim=lsim,
        history=history,
        wall_time=wall,
        peak_param_mem_estimate=int(peak),
        best_iteration=best_it,
        final_state=state,
    )


def direction_bias(point, true_data, observation):
    """Distance between the unit true-data gradient at ``point`` and the unit update."""
    g = grad_params(observation.spec, np.asarray(point, dtype=np.float64), true_data.images, true_data.labels)
    gn = np.linalg.norm(g)
    if gn == 0.0:
        raise DegenerateGradientError()
    delta = observation.delta
    dn = np.linalg.norm(delta)
    if dn == 0.0:
        raise AttackError("observation has w0 == wT")
    return float(np.linalg.norm(g / gn - delta / dn))


def linear_bias_profile(true_data, observation, alphas=None):
    """Direction bias along a grid of chord points."""
    if alphas is None:
        alphas = np.linspace(0.0, 1.0, 21)
    return np.array(
        [direction_bias(linear_eval(LinearTrajectory(observation.w0, observation.wT, a)), true_data, observation) for a in alphas]
    )


def fit_bezier_bias(true_data, observation, t=0.5, steps=200, lr_t=1e-2, lr_p1=1e-1):
    """Descend the cosine mismatch over ``(t, P1)`` with the true data fixed.

    Returns the lowest direction bias seen.  Starting at the chord midpoint
    means the result can only improve on the linear value at ``t``.
    """
    cfg = AttackConfig(
        variant="nlsme",
        iterations=steps,
        lr=0.0,
        lr_t=lr_t,
        lr_p1=lr_p1,
        lambda_tv=0.0,
        use_pr=False,
        check_lr_order=False,
    )
    state = init_state(observation, true_data.labels, cfg)
    state.dummy = true_data.images.copy()
    state.t = t
    best = math.inf
    for _ in range(steps):
        point = bezier_eval(BezierTrajectory(observation.w0, observation.wT, state.P1, state.t))
        best = min(best, direction_bias(point, true_data, observation))
        _, grads = evaluate(state, observation, cfg)
        state = _apply(state, grads, cfg)
    return best
