"""scikit-learn style front end for the inversion attacks.

The attack is not a learner in the usual sense: ``fit`` consumes one
observed client update (plus the known labels) and produces a batch of
reconstructed images.  The estimator shape still buys parameter handling
(``get_params``/``set_params``/``clone``) and a familiar call pattern.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .attack import AttackConfig, run_attack
from .fedsim import Observation
from .metrics import match_batch
from .model import ImageBatch


def check_observation(observation):
    """Validate an observed update and return it unchanged."""
    if not isinstance(observation, Observation):
        raise TypeError(f"expected an Observation, got {type(observation).__name__}")
    w0 = np.asarray(observation.w0)
    wT = np.asarray(observation.wT)
    n_params = observation.spec.n_params
    if w0.shape != (n_params,) or wT.shape != (n_params,):
        raise ValueError(f"parameter vectors must have shape ({n_params},), got {w0.shape} and {wT.shape}")
    if not (np.all(np.isfinite(w0)) and np.all(np.isfinite(wT))):
        raise ValueError("parameter vectors contain non-finite values")
    return observation


def check_labels(labels, observation):
    """Labels as an int64 vector of length ``observation.n`` within the class range."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != observation.n:
        raise ValueError(f"expected {observation.n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    k = observation.spec.num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    return labels.astype(np.int64)


def check_image_batch(images):
    """Accept an ImageBatch or a (B, C, H, W) array; return the array."""
    if isinstance(images, ImageBatch):
        return images.images
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ValueError(f"images must be (B, C, H, W), got shape {images.shape}")
    return images


_CONFIG_FIELDS = [f.name for f in dataclasses.fields(AttackConfig)]


class InversionAttack(BaseEstimator):
    """Reconstruct a client's training batch from one observed update.

    Parameters mirror :class:`nlsme.attack.AttackConfig`.  After ``fit``:

    ``reconstruction_``
        (B, C, H, W) images at the best iterate.
    ``lsim_``
        cosine mismatch at that iterate.
    ``history_``
        per-iteration loss terms.
    """

    def __init__(
        self,
        variant="nlsme",
        iterations=AttackConfig.iterations,
        lr=AttackConfig.lr,
        lr_t=AttackConfig.lr_t,
        lr_p1=AttackConfig.lr_p1,
        lr_d=AttackConfig.lr_d,
        lambda_tv=AttackConfig.lambda_tv,
        lambda_p=AttackConfig.lambda_p,
        lambda_d=AttackConfig.lambda_d,
        lambda_cls=AttackConfig.lambda_cls,
        use_nlp=True,
        use_pr=True,
        seed=0,
        d_bounds=AttackConfig.d_bounds,
        betas=AttackConfig.betas,
        adam_eps=AttackConfig.adam_eps,
        check_lr_order=True,
    ):
        self.variant = variant
        self.iterations = iterations
        self.lr = lr
        self.lr_t = lr_t
        self.lr_p1 = lr_p1
        self.lr_d = lr_d
        self.lambda_tv = lambda_tv
        self.lambda_p = lambda_p
        self.lambda_d = lambda_d
        self.lambda_cls = lambda_cls
        self.use_nlp = use_nlp
        self.use_pr = use_pr
        self.seed = seed
        self.d_bounds = d_bounds
        self.betas = betas
        self.adam_eps = adam_eps
        self.check_lr_order = check_lr_order

    def to_config(self):
        return AttackConfig(**{name: getattr(self, name) for name in _CONFIG_FIELDS}).validate()

    def fit(self, observation, y):
        """Run the attack; ``y`` holds the batch labels known to the attacker."""
        observation = check_observation(observation)
        labels = check_labels(y, observation)
        result = run_attack(observation, self.to_config(), labels)
        self.result_ = result
        self.reconstruction_ = result.reconstruction.images
        self.labels_ = result.reconstruction.labels
        self.lsim_ = result.final_lsim
        self.history_ = result.history
        self.n_params_ = observation.spec.n_params
        return self

    def transform(self, observation=None):
        check_is_fitted(self, "reconstruction_")
        return self.reconstruction_

    def fit_transform(self, observation, y):
        return self.fit(observation, y).reconstruction_

    def predict(self, observation=None):
        """The reconstructed images (the observation argument is accepted for API symmetry)."""
        return self.transform(observation)

    def score(self, truth, y=None):
        """Mean PSNR after optimal matching against the true images."""
        check_is_fitted(self, "reconstruction_")
        return match_batch(self.reconstruction_, check_image_batch(truth)).mean_psnr
