"""Victim classifier: a small MLP evaluated from a flat parameter vector.

The model never holds state.  Every forward pass takes the parameters as an
argument, so arbitrary points in weight space (surrogates, control points)
can be evaluated directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class ImageBatch:
    """Images of shape (B, C, H, W) in [0, 1] with integer class labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be (B, C, H, W), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ValueError(f"labels shape {labels.shape} does not match batch of {images.shape[0]}")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, index):
        return ImageBatch(self.images[index], self.labels[index])


@dataclass(frozen=True)
class ModelSpec:
    input_dims: tuple = (1, 8, 8)
    hidden_sizes: tuple = (16,)
    num_classes: int = 4
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ValueError(f"input_dims must be (C, H, W), got {self.input_dims}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_inputs(self):
        c, h, w = self.input_dims
        return c * h * w

    @property
    def layer_dims(self):
        sizes = (self.n_inputs, *self.hidden_sizes, self.num_classes)
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self):
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_dims)

    def layer_slices(self):
        """(weight slice, bias slice, fan_in, fan_out) per layer, in storage order."""
        out = []
        offset = 0
        for fan_in, fan_out in self.layer_dims:
            w = slice(offset, offset + fan_in * fan_out)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            out.append((w, b, fan_in, fan_out))
        return out


def init_params(spec, seed):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    w = np.zeros(spec.n_params)
    for wsl, _, fan_in, fan_out in spec.layer_slices():
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w[wsl] = rng.uniform(-a, a, size=fan_in * fan_out)
    return w


def _check_params(spec, w):
    if w.shape != (spec.n_params,):
        raise ad.ShapeError("model", w.shape, (spec.n_params,))


def _check_images(spec, images):
    if images.ndim != 4 or tuple(images.shape[1:]) != spec.input_dims:
        raise ad.ShapeError("model", images.shape, (-1, *spec.input_dims))


def forward(spec, w, images):
    """Logits of shape (B, num_classes); ``w`` and ``images`` may be tensors."""
    w = ad.as_tensor(w)
    images = ad.as_tensor(images)
    _check_params(spec, w)
    _check_images(spec, images)
    act = ad.relu if spec.activation == "relu" else ad.tanh
    h = ad.reshape(images, (images.shape[0], spec.n_inputs))
    layers = spec.layer_slices()
    for i, (wsl, bsl, fan_in, fan_out) in enumerate(layers):
        weight = ad.reshape(ad.getitem(w, wsl), (fan_in, fan_out))
        h = ad.add(ad.matmul(h, weight), ad.getitem(w, bsl))
        if i < len(layers) - 1:
            h = act(h)
    return h


def loss(spec, w, images, labels):
    """Mean cross-entropy of the batch at parameters ``w``."""
    return ad.cross_entropy(forward(spec, w, images), labels)


def grad_params(spec, w, images, labels, create_graph=False):
    """Gradient of the mean loss with respect to the parameter vector.

    When ``w`` is a tensor leaf the gradient is taken with respect to it and
    returned as a tensor; with ``create_graph`` the result stays
    differentiable in ``w`` and in the pixels.  A plain array ``w`` gives a
    plain array back.
    """
    if isinstance(w, ad.Tensor):
        if not w.requires_grad:
            raise ad.AutodiffError("grad_params: parameter tensor must require grad")
        return ad.grad(loss(spec, w, images, labels), w, create_graph=create_graph, allow_unused=True)
    leaf = ad.Tensor(np.asarray(w, dtype=np.float64), requires_grad=True)
    return ad.grad(loss(spec, leaf, images, labels), leaf, allow_unused=True).data


def predict(spec, w, images):
    with ad.no_grad():
        return forward(spec, w, images).data.argmax(axis=1)
