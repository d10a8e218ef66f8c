"""Independent numerical oracles shared by the test modules."""

import numpy as np

from nlsme import autodiff as ad


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    grad = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return out


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def tape_grad(fn, x):
    leaf = ad.Tensor(x, requires_grad=True)
    return ad.grad(fn(leaf), leaf).data


def attack_fd_check(state, observation, cfg, rng, k=5, h=1e-5):
    """Analytic vs central-difference gradients of the attack objective.

    Probes ``t`` plus ``k`` random coordinates of the control point, the
    dummy pixels and ``d``.  Returns ``{name: (analytic, numeric)}``.
    """
    from nlsme.attack import evaluate, total_loss

    _, grads = evaluate(state, observation, cfg)

    def loss_with(name, idx, value):
        s = state.copy()
        if name == "t":
            s.t = value
        else:
            getattr(s, name).reshape(-1)[idx] = value
        return total_loss(s, observation, cfg)

    def fd(name, idx, x0):
        return (loss_with(name, idx, x0 + h) - loss_with(name, idx, x0 - h)) / (2 * h)

    out = {"t": (np.array([grads["t"]]), np.array([fd("t", None, state.t)]))}
    for name, key in (("P1", "P1"), ("dummy", "dummy"), ("d", "d")):
        if grads[key] is None:
            continue
        flat = getattr(state, name).reshape(-1)
        idx = rng.choice(flat.size, size=k, replace=False)
        analytic = grads[key].reshape(-1)[idx]
        numeric = np.array([fd(name, i, flat[i]) for i in idx])
        out[name] = (analytic, numeric)
    return out
