"""Reference optimizers and gradients the costate learner is checked against.

* :func:`sgd_momentum_step` -- SGD with momentum and dampening, written the
  way mainstream deep-learning optimizers do it.
* :func:`map_params` / :func:`unmap_params` -- the correspondence between
  ``(gamma, mu, rho)`` and ``(beta, eta, phi)`` for a step ``tau``.
* :func:`bptt_gradients` -- classic back-propagation through time with
  explicit accumulators, optionally truncated to the last ``window`` steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_ad as ad
from .netspec import ModelState, NetSpec, output_map, state_map
from .tensor_ad import Tape


@dataclass(frozen=True)
class SGDConfig:
    """Learning rate ``gamma``, momentum ``mu`` and dampening ``rho``.

    ``init_buffer="gradient"`` seeds the momentum buffer with the first
    gradient (``b = g_0``); ``"zero"`` starts from ``b = 0`` and applies the
    regular update ``mu * 0 + (1 - rho) * g_0`` on the first step.
    """

    gamma: float
    mu: float = 0.0
    rho: float = 0.0
    init_buffer: str = "gradient"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        if not 0 <= self.rho <= 1:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.init_buffer not in ("gradient", "zero"):
            raise ValueError(f"init_buffer must be 'gradient' or 'zero', got {self.init_buffer!r}")


def sgd_momentum_step(theta, grad, buffer, cfg: SGDConfig):
    """One optimizer step; returns ``(theta', buffer')``."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != grad.shape:
        raise ValueError(f"theta shape {theta.shape} != grad shape {grad.shape}")
    if buffer is None:
        if cfg.init_buffer == "gradient":
            buf = grad.copy()
        else:
            buf = cfg.mu * np.zeros_like(grad) + (1.0 - cfg.rho) * grad
    else:
        buffer = np.asarray(buffer, dtype=np.float64)
        if buffer.shape != grad.shape:
            raise ValueError(f"buffer shape {buffer.shape} != grad shape {grad.shape}")
        buf = cfg.mu * buffer + (1.0 - cfg.rho) * grad
    return theta - cfg.gamma * buf, buf


@dataclass(frozen=True)
class MappedParams:
    beta: float
    eta: float
    phi_const: float
    tau: float


class MappingError(ValueError):
    pass


def map_params(sgd: SGDConfig, tau: float) -> MappedParams:
    """``beta = gamma/tau``, ``eta = (1-mu)/tau``, ``phi = (1-rho)/tau``."""
    if not tau > 0:
        raise MappingError(f"tau must be positive, got {tau}")
    if sgd.mu > 1:
        raise MappingError(f"mu = {sgd.mu} > 1 would need a negative dissipation")
    if sgd.rho >= 1:
        raise MappingError(f"rho = {sgd.rho} >= 1 would need a non-positive loss scale")
    return MappedParams(sgd.gamma / tau, (1.0 - sgd.mu) / tau, (1.0 - sgd.rho) / tau, tau)


def unmap_params(m: MappedParams, init_buffer: str = "gradient") -> SGDConfig:
    return SGDConfig(m.beta * m.tau, 1.0 - m.tau * m.eta, 1.0 - m.tau * m.phi_const, init_buffer)


# ---------------------------------------------------------------------------
# feed-forward gradient


def ff_loss_and_grad(spec: NetSpec, state: ModelState, u, y_hat, loss) -> tuple:
    """Loss of the output network and its gradient w.r.t. ``theta_y``."""
    tape = Tape()
    py = [tape.leaf(p) for p in spec.unpack(state.theta_y, "y")]
    y = output_map(spec, ad.tensor(u), state.h, py)
    lv = loss(y, np.asarray(y_hat, dtype=np.float64))
    tape.finalize(lv)
    grads = ad.backward(tape)
    g = np.concatenate([grads[p].ravel() for p in py]) if py else np.zeros(0)
    return float(lv.value), g, ad.value_of(y)


# ---------------------------------------------------------------------------
# BPTT


def _vjp_state(spec: NetSpec, u, h, theta_h, cot, wrt_h: bool, wrt_theta: bool):
    tape = Tape()
    hv = tape.leaf(h)
    ph = [tape.leaf(p) for p in spec.unpack(theta_h, "h")]
    fhat = state_map(spec, ad.tensor(u), hv, ph)
    tape.finalize(fhat)
    grads = ad.backward(tape, cot)
    dh = grads[hv] if wrt_h else None
    dth = np.concatenate([grads[p].ravel() for p in ph]) if wrt_theta else None
    return dh, dth


def _loss_grads(spec: NetSpec, u, h, theta_y, target, loss):
    tape = Tape()
    hv = tape.leaf(h)
    py = [tape.leaf(p) for p in spec.unpack(theta_y, "y")]
    y = output_map(spec, ad.tensor(u), hv, py)
    lv = loss(y, np.asarray(target, dtype=np.float64))
    tape.finalize(lv)
    grads = ad.backward(tape)
    gy = np.concatenate([grads[p].ravel() for p in py]) if py else np.zeros(0)
    return float(lv.value), grads[hv], gy


def forward_states(spec: NetSpec, seq, init_h, theta_h) -> list:
    """``[h_0, ..., h_n]`` with ``h_{k+1} = fhat(u_k, h_k, theta_h)``."""
    hs = [ad.tensor(init_h)]
    params = spec.unpack(theta_h, "h")
    for u in seq:
        hs.append(ad.tensor(state_map(spec, ad.tensor(u), hs[-1], params)))
    return hs


def bptt_gradients(seq, targets, init_h, theta, spec: NetSpec, loss, window: int | None = None):
    """Gradient of ``sum_k L(f_y(h_{k+1}), y_hat_k)`` w.r.t. ``theta``.

    ``seq`` holds the inputs ``u_0..u_{n-1}``, ``targets`` the matching
    ``y_hat_k`` (``None`` where absent). ``theta`` is the concatenation
    ``[theta_h, theta_y]``. The backward sweep keeps two accumulators: the
    sensitivity of the remaining losses to the current state, and the
    running parameter gradient.

    With ``window=r`` only the last ``r`` losses are used and the sweep stops
    at ``h_{n-r}``, which is treated as a constant.

    Returns ``(total_grad, states)`` with ``states = [h_0, ..., h_n]``.
    """
    n = len(seq)
    if n == 0:
        raise ValueError("empty sequence")
    if len(targets) != n:
        raise ValueError(f"{len(targets)} targets for {n} inputs")
    r = n if window is None else window
    if not 1 <= r <= n:
        raise ValueError(f"window must be in [1, {n}], got {r}")
    theta = np.asarray(theta, dtype=np.float64)
    nh = spec.n_params_h
    theta_h, theta_y = theta[:nh], theta[nh:]
    hs = forward_states(spec, seq, init_h, theta_h)

    h_acc = None  # sensitivity to h_{q+1} carried from the previous iteration
    g_h = np.zeros(nh)
    g_y = np.zeros(theta_y.shape[0])
    for q in range(n, n - r, -1):
        c = q - 1
        a = np.zeros(spec.state_dim)
        if targets[c] is not None:
            _, dl_dh, dl_dy = _loss_grads(spec, seq[c], hs[q], theta_y, targets[c], loss)
            a = a + dl_dh
            g_y = g_y + dl_dy
        if h_acc is not None:
            jt, _ = _vjp_state(spec, seq[q], hs[q], theta_h, h_acc, wrt_h=True, wrt_theta=False)
            a = a + jt
        _, dth = _vjp_state(spec, seq[c], hs[c], theta_h, a, wrt_h=False, wrt_theta=True)
        g_h = g_h + dth
        h_acc = a
    return np.concatenate([g_h, g_y]), hs


def sequence_loss(seq, targets, init_h, theta, spec: NetSpec, loss, window: int | None = None,
                  prefix_theta=None) -> float:
    """Summed loss that :func:`bptt_gradients` differentiates (eager, for checks).

    With a window only the last ``window`` losses count. Passing
    ``prefix_theta`` computes the states up to ``h_{n-window}`` with those
    fixed parameters, which is what the truncated gradient holds constant.
    """
    n = len(seq)
    r = n if window is None else window
    theta = np.asarray(theta, dtype=np.float64)
    nh = spec.n_params_h
    params = spec.unpack(theta[:nh], "h")
    pre = params if prefix_theta is None else spec.unpack(np.asarray(prefix_theta, dtype=np.float64)[:nh], "h")
    py = spec.unpack(theta[nh:], "y")
    h = ad.tensor(init_h)
    total = 0.0
    for k in range(n):
        h = ad.tensor(state_map(spec, ad.tensor(seq[k]), h, pre if k < n - r else params))
        if k >= n - r and targets[k] is not None:
            y = output_map(spec, ad.tensor(seq[k]), h, py)
            total += float(loss(y, np.asarray(targets[k], dtype=np.float64)))
    return total
