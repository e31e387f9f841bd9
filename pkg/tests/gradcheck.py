"""Directional finite-difference checks shared by the net, trainer and acceptance tests."""
import numpy as np


def directional_error(loss_at, params, grads, rng, eps=1e-6):
    """Relative error between ``grads . dir`` and a central difference of ``loss_at`` along ``dir``.

    ``loss_at(params)`` returns a scalar; ``params`` and ``grads`` are lists of arrays.
    """
    dirs = [rng.normal(size=p.shape) for p in params]
    norm = np.sqrt(sum((d * d).sum() for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
    up = loss_at([p + eps * d for p, d in zip(params, dirs)])
    down = loss_at([p - eps * d for p, d in zip(params, dirs)])
    fd = (up - down) / (2 * eps)
    return abs(fd - analytic) / max(abs(analytic), abs(fd), 1e-8)


def with_params(net, params):
    clone = net.copy()
    clone.set_params(params)
    return clone


def pair_loss_at(nets, which, loss_fn):
    """``loss_at`` for net ``which`` of a pair, others frozen."""

    def loss_at(params):
        trial = list(nets)
        trial[which] = with_params(nets[which], params)
        return loss_fn(trial)

    return loss_at
