"""Forward-integrated Hamilton equations and the costate learning step.

One call to :func:`hl_step` consumes a single stream item and advances the
state ``[h, theta]`` and the costate ``[z, omega]`` by one explicit Euler
step::

    hdot     = f_h(u, h, theta_h)
    thetadot = -beta * omega
    H'       = phi(t) * L(f_y(u, h, theta_y), y_hat) + z . hdot
    zdot     = -s dH'/dh     - eta * z
    omegadot = -s dH'/dtheta - eta * omega

with ``s = -1`` so that the costate runs forward in time from zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import tensor_ad as ad
from .netspec import ModelState, NetSpec, advance_h, check_state, output_map, state_rate, trace_model

ORDERINGS = ("simultaneous", "sequential")


# ---------------------------------------------------------------------------
# costate


@dataclass(frozen=True)
class Costate:
    z: np.ndarray
    omega_h: np.ndarray
    omega_y: np.ndarray

    @property
    def omega(self) -> np.ndarray:
        return np.concatenate([self.omega_h, self.omega_y])

    @classmethod
    def zeros_like(cls, state: ModelState) -> "Costate":
        return cls(
            ad.tensor(np.zeros_like(state.h)),
            ad.tensor(np.zeros_like(state.theta_h)),
            ad.tensor(np.zeros_like(state.theta_y)),
        )

    def shapes(self) -> tuple:
        return self.z.shape, self.omega_h.shape, self.omega_y.shape


def reset_costate(costate: Costate, which: str = "both") -> Costate:
    """Zero ``z``, ``omega`` or both; untouched parts are returned as-is."""
    if which not in ("z", "omega", "both"):
        raise ValueError(f"which must be 'z', 'omega' or 'both', got {which!r}")
    z = costate.z
    wh, wy = costate.omega_h, costate.omega_y
    if which in ("z", "both"):
        z = ad.tensor(np.zeros_like(z))
    if which in ("omega", "both"):
        wh = ad.tensor(np.zeros_like(wh))
        wy = ad.tensor(np.zeros_like(wy))
    return Costate(z, wh, wy)


# ---------------------------------------------------------------------------
# loss-scale schedules


@dataclass(frozen=True)
class ConstantPhi:
    value: float

    def __call__(self, t: float) -> float:
        return self.value


@dataclass(frozen=True)
class ExponentialPhi:
    """``a * exp(b * t)``, an exponential learning-rate scheduler."""

    a: float
    b: float

    def __call__(self, t: float) -> float:
        return self.a * math.exp(self.b * t)


@dataclass(frozen=True)
class ReciprocalPhi:
    """``1 / tau``."""

    tau: float

    def __call__(self, t: float) -> float:
        return 1.0 / self.tau


@dataclass(frozen=True)
class WarmStartPhi:
    """``first`` for ``t < until``, then ``rest(t)``.

    With ``first = 1/tau`` the costate after the first sample equals the
    first gradient, which reproduces momentum-SGD implementations that seed
    their buffer with ``g_0``.
    """

    first: float
    rest: Callable[[float], float]
    until: float

    def __call__(self, t: float) -> float:
        return self.first if t < self.until else self.rest(t)


# ---------------------------------------------------------------------------
# config / loss


@dataclass(frozen=True)
class HLConfig:
    """Integration and learning constants.

    ``tau=None`` means the step is taken from the stream spacing.
    ``beta`` is a scalar (broadcast) or a per-parameter vector.
    ``beta_schedule``, when given, overrides ``beta`` with a function of time.
    """

    tau: float | None = 1.0
    beta: float | np.ndarray = 0.01
    eta: float = 0.0
    phi: Callable[[float], float] = field(default_factory=lambda: ConstantPhi(1.0))
    s: int = -1
    ordering: str = "simultaneous"
    beta_schedule: Callable[[float], np.ndarray] | None = None

    def __post_init__(self):
        if self.tau is not None and not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if self.s not in (-1, 1):
            raise ValueError(f"s must be -1 or +1, got {self.s}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")
        if np.any(np.asarray(self.beta) < 0):
            raise ValueError("beta must be non-negative")

    def beta_vector(self, n: int, t: float = 0.0) -> np.ndarray:
        beta = self.beta if self.beta_schedule is None else self.beta_schedule(t)
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim == 0:
            return np.full(n, float(beta))
        if beta.shape != (n,):
            raise ValueError(f"beta has shape {beta.shape}, expected ({n},)")
        return beta

    def phi_at(self, t: float) -> float:
        value = float(self.phi(t))
        if not value > 0:
            raise ValueError(f"phi({t}) = {value} is not positive")
        return value


@dataclass(frozen=True)
class LossSpec:
    kind: str = "softmax_cross_entropy"

    def __post_init__(self):
        if self.kind not in ("mse", "softmax_cross_entropy"):
            raise ValueError(f"loss kind must be 'mse' or 'softmax_cross_entropy', got {self.kind!r}")

    def __call__(self, y, target):
        if self.kind == "mse":
            return ad.mse(y, target)
        return ad.softmax_cross_entropy(y, target)


def accuracy(y: np.ndarray, target) -> float | None:
    """1.0 if the arg-max of ``y`` matches the target class, else 0.0."""
    if target is None:
        return None
    y = np.asarray(y)
    target = np.asarray(target)
    if y.ndim == 2:
        return float(np.mean([accuracy(a, b) for a, b in zip(y, target)]))
    cls = int(np.argmax(target)) if target.shape == y.shape else int(target.reshape(()))
    return float(int(np.argmax(y)) == cls)


# ---------------------------------------------------------------------------
# Hamiltonian and its derivatives


def _rows(u, y_hat):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        return [u], [y_hat]
    targets = [None] * u.shape[0] if y_hat is None else list(np.asarray(y_hat, dtype=np.float64))
    return list(u), targets


class _Trace(NamedTuple):
    traced: object
    H: object
    hdot: np.ndarray
    fhat: np.ndarray
    y: np.ndarray
    loss: float | None


def _trace_hamiltonian(state, costate, u, y_hat, t, cfg, loss, spec, tau, step_index=None) -> _Trace:
    """Record ``H'`` on a fresh tape.

    Mini-batches (2-D ``u``) average ``H'`` over the rows; the neuron state
    is shared by all rows and moves with the mean velocity.
    """
    traced = trace_model(spec, state)
    us, ts = _rows(u, y_hat)
    inv_b = 1.0 / len(us)
    phi = cfg.phi_at(t) if any(tg is not None for tg in ts) else None
    terms, hdots, fhats, ys, losses = [], [], [], [], []
    for ur, tr in zip(us, ts):
        hdot, fhat = state_rate(spec, ur, traced.h, traced.params_h, tau, step_index)
        y = output_map(spec, ur, traced.h, traced.params_y)
        row = []
        if tr is not None:
            lv = loss(y, np.asarray(tr, dtype=np.float64))
            losses.append(float(ad.value_of(lv)))
            row.append(ad.scale(lv, phi))
        if spec.state_dim:
            row.append(ad.matmul(costate.z, hdot))
        if row:
            term = ad.sum_scalars(row)
            terms.append(term if len(us) == 1 else ad.scale(term, inv_b))
        hdots.append(ad.value_of(hdot))
        fhats.append(ad.value_of(fhat))
        ys.append(ad.value_of(y))
    H = ad.sum_scalars(terms) if terms else None
    if len(us) == 1:
        hdot_v, fhat_v, y_v = hdots[0], fhats[0], ys[0]
    else:
        hdot_v, fhat_v, y_v = np.mean(hdots, axis=0), np.mean(fhats, axis=0), np.stack(ys)
    loss_v = None if not losses else (losses[0] if len(us) == 1 else float(np.mean(losses)))
    return _Trace(traced, H, hdot_v, fhat_v, y_v, loss_v)


def _partials(tr: _Trace):
    """``(dH'/dh, dH'/dtheta_h, dH'/dtheta_y)``; zeros if H' is constant."""
    traced = tr.traced
    if not isinstance(tr.H, ad.Var):
        return (np.zeros_like(traced.h.value),
                np.zeros(sum(p.value.size for p in traced.params_h)),
                np.zeros(sum(p.value.size for p in traced.params_y)))
    traced.tape.finalize(tr.H)
    grads = ad.backward(traced.tape)
    return traced.grad_h(grads), traced.grad_theta_h(grads), traced.grad_theta_y(grads)


def robust_hamiltonian(state: ModelState, costate: Costate, u, y_hat, t: float, cfg: HLConfig, loss: LossSpec,
                       spec: NetSpec, tau: float | None = None) -> float:
    """``H' = phi(t) L(y, y_hat) + z . hdot``; the loss term is dropped without a target."""
    tau = cfg.tau if tau is None else tau
    tr = _trace_hamiltonian(state, costate, u, y_hat, t, cfg, loss, spec, tau)
    return 0.0 if tr.H is None else float(ad.value_of(tr.H))


def he_state_rhs(u, state: ModelState, spec: NetSpec, tau: float | None = None) -> np.ndarray:
    hdot, _ = state_rate(spec, ad.tensor(u), state.h, spec.unpack(state.theta_h, "h"), tau)
    return hdot


def he_param_rhs(costate: Costate, cfg: HLConfig, t: float = 0.0) -> np.ndarray:
    """``thetadot = -beta * omega`` over the concatenated ``omega``."""
    omega = costate.omega
    return -cfg.beta_vector(omega.shape[0], t) * omega


def costate_rates(partials, costate: Costate, cfg: HLConfig):
    dh, dth, dty = partials
    ms = -float(cfg.s)
    zdot = ms * dh - cfg.eta * costate.z
    wh = ms * dth - cfg.eta * costate.omega_h
    wy = ms * dty - cfg.eta * costate.omega_y
    return zdot, wh, wy


def he_costate_rhs(state: ModelState, costate: Costate, u, y_hat, t: float, cfg: HLConfig, loss: LossSpec,
                   spec: NetSpec, tau: float | None = None):
    """``(zdot, omegadot)`` from one differentiation pass of ``H'``."""
    tau = cfg.tau if tau is None else tau
    tr = _trace_hamiltonian(state, costate, u, y_hat, t, cfg, loss, spec, tau)
    zdot, wh, wy = costate_rates(_partials(tr), costate, cfg)
    return zdot, np.concatenate([wh, wy])


def euler_step(value, rate, tau: float) -> np.ndarray:
    """``value + tau * rate``."""
    value = np.asarray(value, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    if value.shape != rate.shape:
        raise ValueError(f"euler_step: value shape {value.shape} != rate shape {rate.shape}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return value + tau * rate


# ---------------------------------------------------------------------------
# one step of the algorithm


class StepResult(NamedTuple):
    state: ModelState
    costate: Costate
    y: np.ndarray
    loss: float | None


def hl_step(state: ModelState, costate: Costate, item, cfg: HLConfig, loss: LossSpec, spec: NetSpec,
            tau: float | None = None, step_index: int | None = None) -> StepResult:
    """Consume one stream item and integrate all four equations.

    ``item`` needs ``u``, ``y_hat`` (or ``None``) and ``timestamp``.
    ``tau`` overrides ``cfg.tau`` for this step (uneven spacing).
    ``step_index`` activates the grouped mask of the state network.

    With ``cfg.ordering == "sequential"`` the weights move with the costate
    already updated by this sample, i.e. gradient first, update after.
    """
    tau = cfg.tau if tau is None else tau
    if tau is None or not tau > 0:
        raise ValueError(f"step size must be positive, got {tau}")
    t = float(item.timestamp)
    tr = _trace_hamiltonian(state, costate, item.u, item.y_hat, t, cfg, loss, spec, tau, step_index)
    zdot, wh_dot, wy_dot = costate_rates(_partials(tr), costate, cfg)

    z_new = costate.z + tau * zdot
    wh_new = costate.omega_h + tau * wh_dot
    wy_new = costate.omega_y + tau * wy_dot

    n_h = state.theta_h.shape[0]
    beta = cfg.beta_vector(n_h + state.theta_y.shape[0], t)
    if cfg.ordering == "sequential":
        wh_use, wy_use = wh_new, wy_new
    else:
        wh_use, wy_use = costate.omega_h, costate.omega_y
    th_new = state.theta_h + tau * (-beta[:n_h] * wh_use)
    ty_new = state.theta_y + tau * (-beta[n_h:] * wy_use)

    h_new = advance_h(spec, state.h, tr.hdot, tr.fhat, tau, step_index)
    new_state = ModelState(h_new, ad.tensor(th_new), ad.tensor(ty_new))
    new_costate = Costate(ad.tensor(z_new), ad.tensor(wh_new), ad.tensor(wy_new))
    return StepResult(new_state, new_costate, tr.y, tr.loss)


class HLLearner:
    """Stateful driver around :func:`hl_step` for a stream.

    Tracks the last timestamp; when ``cfg.tau`` is ``None`` each step uses
    the elapsed time since the previous item (``first_tau`` for the first).
    """

    def __init__(self, spec: NetSpec, state: ModelState, cfg: HLConfig, loss: LossSpec,
                 costate: Costate | None = None, first_tau: float = 1.0):
        check_state(spec, state)
        self.spec = spec
        self.state = state
        self.costate = Costate.zeros_like(state) if costate is None else costate
        self.cfg = cfg
        self.loss = loss
        self.first_tau = first_tau
        self.last_time: float | None = None
        self.steps = 0

    def step_size(self, timestamp: float) -> float:
        if self.cfg.tau is not None:
            return self.cfg.tau
        if self.last_time is None:
            return self.first_tau
        return timestamp - self.last_time

    def observe(self, item, step_index: int | None = None) -> StepResult:
        ts = float(item.timestamp)
        if self.last_time is not None and not ts > self.last_time:
            raise ValueError(f"timestamps must increase: {ts} after {self.last_time}")
        tau = self.step_size(ts)
        res = hl_step(self.state, self.costate, item, self.cfg, self.loss, self.spec, tau, step_index)
        self.state, self.costate = res.state, res.costate
        self.last_time = ts
        self.steps += 1
        return res

    def reset(self, which: str):
        """Zero parts of the run state: ``'h'``, ``'z'``, ``'omega'`` or ``'both'``."""
        if which == "h":
            self.state = replace(self.state, h=ad.tensor(np.zeros_like(self.state.h)))
        else:
            self.costate = reset_costate(self.costate, which)
