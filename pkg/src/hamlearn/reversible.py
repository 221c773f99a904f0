"""Midpoint-rule state integration with activation-free backpropagation.

The chain ``h_{k+1} = h_{k-1} + tau * f(u_k, h_k, theta)`` can be run
backwards, ``h_{k-1} = h_{k+1} - tau * f(u_k, h_k, theta)``, evaluating
``f`` at exactly the point used going forward. Gradients of a loss on the
final state can therefore be computed while holding only two states.

The first transition has a single seed state and is an Euler step
``h_1 = h_0 + tau * f(u_0, h_0)``; a chain of depth ``D`` performs ``D``
transitions, this bootstrap included.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor_ad as ad
from .netspec import NetSpec, state_rate
from .tensor_ad import Tape


class ChainError(RuntimeError):
    """The chain is missing its seed states."""


class ReconstructionError(FloatingPointError):
    """Backward reconstruction drifted from a checkpointed forward state."""


@dataclass(frozen=True)
class MidpointChain:
    h_prev: np.ndarray | None
    h_curr: np.ndarray | None
    tau: float
    step: int = 0

    @property
    def ready(self) -> bool:
        return self.h_prev is not None and self.h_curr is not None


def _velocity(spec: NetSpec, u, h, theta_h, tau) -> np.ndarray:
    hdot, _ = state_rate(spec, ad.tensor(u), h, spec.unpack(theta_h, "h"), tau)
    return np.asarray(ad.value_of(hdot))


def bootstrap(h0, u, theta_h, spec: NetSpec, tau: float) -> MidpointChain:
    """Seed pair ``(h_0, h_0 + tau f(u, h_0))``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    h0 = ad.tensor(h0)
    return MidpointChain(h0, ad.tensor(h0 + tau * _velocity(spec, u, h0, theta_h, tau)), tau, 1)


def midpoint_forward(chain: MidpointChain, u, theta_h, spec: NetSpec) -> MidpointChain:
    """Slide the window: ``(h_prev, h_curr) -> (h_curr, h_prev + tau f(u, h_curr))``."""
    if not chain.ready:
        raise ChainError("chain needs two seed states; use bootstrap()")
    h_next = chain.h_prev + chain.tau * _velocity(spec, u, chain.h_curr, theta_h, chain.tau)
    return MidpointChain(chain.h_curr, ad.tensor(h_next), chain.tau, chain.step + 1)


def midpoint_reverse(chain: MidpointChain, u, theta_h, spec: NetSpec) -> np.ndarray:
    """The state before ``chain.h_prev``: ``h_curr - tau f(u, h_prev)``.

    ``u`` must be the input that produced ``chain.h_curr``.
    """
    if not chain.ready:
        raise ChainError("chain needs two states")
    return ad.tensor(chain.h_curr - chain.tau * _velocity(spec, u, chain.h_prev, theta_h, chain.tau))


def step_back(chain: MidpointChain, u, theta_h, spec: NetSpec) -> MidpointChain:
    return MidpointChain(midpoint_reverse(chain, u, theta_h, spec), chain.h_prev, chain.tau, chain.step - 1)


def _inputs(u, depth: int) -> list:
    if isinstance(u, (list, tuple)):
        if len(u) != depth:
            raise ValueError(f"{len(u)} inputs for depth {depth}")
        return [ad.tensor(x) for x in u]
    x = ad.tensor(u)
    return [x] * depth


def run_forward(depth: int, u, theta_h, spec: NetSpec, h0, tau: float) -> list:
    """All states ``[h_0, ..., h_depth]`` (stores everything; for checks)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    us = _inputs(u, depth)
    chain = bootstrap(h0, us[0], theta_h, spec, tau)
    hs = [chain.h_prev, chain.h_curr]
    for k in range(1, depth):
        chain = midpoint_forward(chain, us[k], theta_h, spec)
        hs.append(chain.h_curr)
    return hs


class ReversibleResult(NamedTuple):
    grad_theta: np.ndarray
    grad_h0: np.ndarray
    loss: float
    peak_retained: int
    max_drift: float | None


class _Slots:
    """Two mutable state buffers; counts how many are ever live at once."""

    def __init__(self):
        self.live = 0
        self.peak = 0

    def alloc(self, value) -> np.ndarray:
        self.live += 1
        self.peak = max(self.peak, self.live)
        return np.array(value, dtype=np.float64)


def _vjp(spec, u, h, theta_h, cot, tau):
    tape = Tape()
    hv = tape.leaf(h)
    ph = [tape.leaf(p) for p in spec.unpack(theta_h, "h")]
    hdot, _ = state_rate(spec, u, hv, ph, tau)
    f = np.asarray(ad.value_of(hdot))
    if not isinstance(hdot, ad.Var):
        return f, np.zeros_like(h), np.zeros(np.asarray(theta_h).shape[0])
    tape.finalize(hdot)
    grads = ad.backward(tape, cot)
    dth = np.concatenate([grads[p].ravel() for p in ph]) if ph else np.zeros(0)
    return f, grads[hv], dth


def _final_loss_grad(h, loss, target):
    tape = Tape()
    hv = tape.leaf(h)
    lv = loss(hv, np.asarray(target, dtype=np.float64))
    tape.finalize(lv)
    return float(lv.value), ad.backward(tape)[hv]


def reversible_backprop(depth: int, u, theta_h, spec: NetSpec, loss, target, tau: float = 1.0, h0=None,
                        checkpoint_every: int | None = None, drift_tol: float = 1e-8) -> ReversibleResult:
    """Gradient of ``loss(h_depth, target)`` without storing activations.

    The forward sweep keeps only the current pair of states. The backward
    sweep rebuilds each earlier state in place with :func:`midpoint_reverse`
    while carrying the adjoints of the current pair. ``u`` is one input used
    at every step or a list with one input per step (re-presented, not
    stored activations).

    With ``checkpoint_every=k`` every ``k``-th forward state is also kept and
    compared against its reconstruction; a deviation above ``drift_tol``
    raises :class:`ReconstructionError`. Checkpoints are not counted as
    retained states.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    us = _inputs(u, depth)
    theta_h = ad.tensor(theta_h)
    h0 = np.zeros(spec.state_dim) if h0 is None else ad.tensor(h0)
    slots = _Slots()
    checkpoints = {}

    # forward: a = h_{k-1}, b = h_k, rolled in place
    a = slots.alloc(h0)
    b = slots.alloc(h0 + tau * _velocity(spec, us[0], a, theta_h, tau))
    if checkpoint_every:
        checkpoints[0] = a.copy()
        if 1 % checkpoint_every == 0:
            checkpoints[1] = b.copy()
    for k in range(1, depth):
        a += tau * _velocity(spec, us[k], b, theta_h, tau)  # a now holds h_{k+1}
        a, b = b, a
        if checkpoint_every and (k + 1) % checkpoint_every == 0:
            checkpoints[k + 1] = b.copy()

    loss_v, g_curr = _final_loss_grad(b, loss, target)
    g_prev = np.zeros_like(g_curr)
    g_theta = np.zeros(theta_h.shape[0])
    max_drift = 0.0 if checkpoint_every else None

    # backward: (a, b) = (h_{k}, h_{k+1}); adjoints (g_prev, g_curr)
    for k in range(depth - 1, 0, -1):
        f, dh, dth = _vjp(spec, us[k], a, theta_h, tau * g_curr, tau)
        g_theta += dth
        g_prev, g_curr = g_curr, g_prev + dh
        b -= tau * f  # b now holds h_{k-1}
        a, b = b, a
        if checkpoint_every and k - 1 in checkpoints:
            drift = float(np.max(np.abs(a - checkpoints[k - 1]))) if a.size else 0.0
            max_drift = max(max_drift, drift)
            if drift > drift_tol:
                raise ReconstructionError(f"reconstructed h_{k - 1} deviates by {drift:.3e} (> {drift_tol:.1e})")

    # bootstrap transition h_1 = h_0 + tau f(u_0, h_0)
    _, dh, dth = _vjp(spec, us[0], a, theta_h, tau * g_curr, tau)
    g_theta += dth
    g_h0 = g_prev + g_curr + dh
    return ReversibleResult(g_theta, g_h0, loss_v, slots.peak, max_drift)


def tape_backprop(depth: int, u, theta_h, spec: NetSpec, loss, target, tau: float = 1.0, h0=None):
    """Reference gradient: record the whole chain on one tape.

    Returns ``(loss, grad_theta, grad_h0)``.
    """
    us = _inputs(u, depth)
    tape = Tape()
    h0 = np.zeros(spec.state_dim) if h0 is None else h0
    hv0 = tape.leaf(h0)
    ph = [tape.leaf(p) for p in spec.unpack(theta_h, "h")]

    def f(uk, h):
        hdot, _ = state_rate(spec, uk, h, ph, tau)
        return hdot

    prev = hv0
    curr = ad.add(hv0, ad.scale(f(us[0], hv0), tau))
    for k in range(1, depth):
        prev, curr = curr, ad.add(prev, ad.scale(f(us[k], curr), tau))
    lv = loss(curr, np.asarray(target, dtype=np.float64))
    tape.finalize(lv)
    grads = ad.backward(tape)
    gth = np.concatenate([grads[p].ravel() for p in ph]) if ph else np.zeros(0)
    return float(lv.value), gth, grads[hv0]


def round_trip_error(depth: int, u, theta_h, spec: NetSpec, h0, tau: float) -> float:
    """Run forward, then rebuild every state backwards; max abs mismatch."""
    hs = run_forward(depth, u, theta_h, spec, h0, tau)
    us = _inputs(u, depth)
    chain = MidpointChain(hs[-2], hs[-1], tau, depth)
    worst = 0.0
    for k in range(depth - 1, 0, -1):
        chain = step_back(chain, us[k], theta_h, spec)
        worst = max(worst, float(np.max(np.abs(chain.h_prev - hs[k - 1]))) if hs[k - 1].size else 0.0)
    return worst
