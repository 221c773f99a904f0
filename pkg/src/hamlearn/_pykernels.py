"""Pure-numpy versions of the numeric kernels.

Used when the compiled extension is unavailable or when
``HAMLEARN_PURE_PYTHON=1`` is set. Every function here has a twin with the
same name and signature in ``_ckernels.pyx``.
"""

import numpy as np


def matvec(a, x):
    return a @ x


def rmatvec(a, g):
    return a.T @ g


def outer(g, x):
    return np.outer(g, x)


def tanh(x):
    return np.tanh(x)


def tanh_vjp(g, y):
    return g * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_vjp(g, x):
    return np.where(x > 0.0, g, 0.0)


def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_xent(z, target):
    """Cross-entropy of logits ``z`` against a probability vector ``target``.

    Returns ``(loss, grad)`` with ``grad = softmax(z) * sum(target) - target``.
    """
    m = z.max()
    shifted = z - m
    e = np.exp(shifted)
    s = e.sum()
    lse = np.log(s)
    loss = float(np.dot(target, lse - shifted))
    grad = (e / s) * target.sum() - target
    return loss, grad
