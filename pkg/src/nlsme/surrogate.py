"""Surrogate parameter trajectories between ``w0`` and ``wT``.

Both trajectories are evaluated in plain numpy; the curve parameter and the
control point never go on the tape.  Attack code pulls the gradient with
respect to the surrogate point back through :func:`bezier_dt` and
:func:`bezier_dP1_coeff` by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _clamp01(x):
    return float(min(1.0, max(0.0, x)))


@dataclass
class LinearTrajectory:
    w0: np.ndarray
    wT: np.ndarray
    alpha: float = 0.5

    def __post_init__(self):
        self.alpha = _clamp01(self.alpha)

    def eval(self):
        return linear_eval(self)


@dataclass
class BezierTrajectory:
    w0: np.ndarray
    wT: np.ndarray
    P1: np.ndarray
    t: float = 0.5

    def __post_init__(self):
        self.t = _clamp01(self.t)
        if not (np.shape(self.w0) == np.shape(self.wT) == np.shape(self.P1)):
            raise ValueError("w0, wT and P1 must have equal shapes")

    @classmethod
    def straight(cls, w0, wT, t=0.5):
        """Curve whose control point sits at the chord midpoint."""
        return cls(w0, wT, midpoint(w0, wT), t)

    def eval(self):
        return bezier_eval(self)

    def dt(self):
        return bezier_dt(self)


def midpoint(w0, wT):
    return (np.asarray(w0) + np.asarray(wT)) / 2.0


def linear_eval(traj):
    a = traj.alpha
    return (1.0 - a) * traj.w0 + a * traj.wT


def bezier_eval(traj):
    t = traj.t
    s = 1.0 - t
    return s * s * traj.w0 + 2.0 * s * t * traj.P1 + t * t * traj.wT


def bezier_dt(traj):
    """Per-coordinate derivative of the curve point with respect to t."""
    t = traj.t
    return -2.0 * (1.0 - t) * traj.w0 + 2.0 * (1.0 - 2.0 * t) * traj.P1 + 2.0 * t * traj.wT


def bezier_dP1_coeff(t):
    """d(curve_i)/d(P1_i); the Jacobian is this scalar times the identity."""
    return 2.0 * (1.0 - t) * t
