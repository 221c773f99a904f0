"""Configurations under which the learning dynamics reduce to BP and BPTT.

Five constructions are available through :func:`run_mode`:

``ff_output``
    Feed-forward net as the output network, empty neuron state.
``ff_state``
    Feed-forward net as the state network with the residual wrapper and an
    identity output; ``h`` and ``z`` are cleared before every sample.
``rnn_unfold``
    The recurrent net unrolled over a whole sequence, treated as an
    ``ff_output`` model whose input is the flattened sequence.
``rnn_hl_bptt``
    Every sequence is streamed forward and then backward; the costate
    accumulates the BPTT gradient and one weight update happens on the last
    replayed token.
``rnn_truncated``
    Same, but only the last ``window - 1`` tokens are replayed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import tensor_ad as ad
from .hl_core import Costate, HLConfig, LossSpec, StepResult, accuracy, hl_step, reset_costate
from .netspec import Dense, ModelState, NetSpec, UnrolledRNN, output_map, state_map, state_rate
from .records import RunRecord
from .stream import StreamError, StreamSource, psi_map, replay_order
from .tensor_ad import Tape

KINDS = ("ff_output", "ff_state", "rnn_unfold", "rnn_hl_bptt", "rnn_truncated")


class ModeError(ValueError):
    """The network description does not fit the requested construction."""


class ReplayError(KeyError):
    """A replay step asked for a state that was never stored."""


@dataclass(frozen=True)
class RecoveryMode:
    """Which construction to run and how to treat the costate between updates.

    ``reset_omega``: ``None`` picks the construction's default (keep ``omega``
    across samples for the feed-forward modes, so ``eta`` acts as momentum;
    clear it at every pivot for the replay modes). ``True``/``False``
    force the choice.

    ``beta_schedule``: ``"constant"`` or ``"final_only"``; the replay modes
    always use ``"final_only"``.
    """

    kind: str
    window: int | None = None
    reset_omega: bool | None = None
    beta_schedule: str = "constant"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModeError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.beta_schedule not in ("constant", "final_only"):
            raise ModeError(f"beta_schedule must be 'constant' or 'final_only', got {self.beta_schedule!r}")
        if self.kind == "rnn_truncated" and self.window is None:
            raise ModeError("rnn_truncated needs a window")
        if self.window is not None and self.window < 1:
            raise ModeError(f"window must be >= 1, got {self.window}")

    @property
    def is_replay(self) -> bool:
        return self.kind in ("rnn_hl_bptt", "rnn_truncated")

    @property
    def clears_omega(self) -> bool:
        if self.reset_omega is not None:
            return self.reset_omega
        return self.is_replay


# ---------------------------------------------------------------------------
# spec checks


def check_mode_spec(mode: RecoveryMode, spec: NetSpec):
    if mode.kind in ("ff_output", "rnn_unfold"):
        if spec.state_dim != 0:
            raise ModeError(f"{mode.kind} needs an empty neuron state (state_dim 0)")
        if spec.output_source != "u":
            raise ModeError(f"{mode.kind} needs the output network to read u")
    if mode.kind == "rnn_unfold":
        if not spec.output_layers or not isinstance(spec.output_layers[0], UnrolledRNN):
            raise ModeError("rnn_unfold needs an UnrolledRNN as first output layer")
    if mode.kind == "ff_state":
        _check_ff_state_spec(spec)
    if mode.is_replay:
        if spec.residual_mode != "instantaneous" or spec.state_dim == 0:
            raise ModeError(f"{mode.kind} needs a recurrent state network in instantaneous mode")
        if spec.output_source == "u":
            raise ModeError(f"{mode.kind} needs an output network reading h")


def _check_ff_state_spec(spec: NetSpec):
    if spec.residual_mode != "instantaneous":
        raise ModeError("ff_state needs residual_mode='instantaneous'")
    if spec.output_layers or spec.output_source != "h":
        raise ModeError("ff_state needs an identity output network (no output layers, output_source='h')")
    if spec.state_source != "u" or spec.state_wiring != "chain":
        raise ModeError("ff_state needs a chain state network reading u only")


# ---------------------------------------------------------------------------
# feed-forward via the state network


def ff_state_step(state: ModelState, costate: Costate, item, cfg: HLConfig, loss: LossSpec, spec: NetSpec,
                  tau: float | None = None) -> StepResult:
    """One sample with the network in the state equation.

    ``h`` and ``z`` are cleared first, the state jumps to the network output
    ``h' = fhat(u, 0, theta_h)``, the loss is evaluated at ``h'``, and the
    costate takes the value ``z' = tau * phi * dL/dh'`` (sign ``s`` folded
    in). The weight costate then integrates ``z'`` through the parameter
    Jacobian of the residual velocity.
    """
    _check_ff_state_spec(spec)
    tau = cfg.tau if tau is None else tau
    if tau is None or not tau > 0:
        raise ValueError(f"step size must be positive, got {tau}")
    t = float(item.timestamp)
    ms = -float(cfg.s)

    tape = Tape()
    ph = [tape.leaf(p) for p in spec.unpack(state.theta_h, "h")]
    h0 = np.zeros(spec.state_dim)
    hdot, fhat = state_rate(spec, ad.tensor(item.u), h0, ph, tau)
    h_new = ad.tensor(ad.value_of(fhat))

    if item.y_hat is None:
        z_new = np.zeros(spec.state_dim)
        loss_v = None
    else:
        lt = Tape()
        hv = lt.leaf(h_new)
        lv = loss(output_map(spec, ad.tensor(item.u), hv, []), np.asarray(item.y_hat, dtype=np.float64))
        lt.finalize(lv)
        dl_dh = ad.backward(lt)[hv]
        loss_v = float(lv.value)
        z_new = ms * tau * cfg.phi_at(t) * dl_dh

    if ph and isinstance(hdot, ad.Var):
        tape.finalize(hdot)
        grads = ad.backward(tape, z_new)
        dth = np.concatenate([grads[p].ravel() for p in ph])
    else:
        dth = np.zeros(state.theta_h.shape[0])
    wh_new = costate.omega_h + tau * (ms * dth - cfg.eta * costate.omega_h)

    beta = cfg.beta_vector(state.theta_h.shape[0] + state.theta_y.shape[0], t)[: state.theta_h.shape[0]]
    w_use = wh_new if cfg.ordering == "sequential" else costate.omega_h
    th_new = state.theta_h + tau * (-beta * w_use)

    new_state = ModelState(h_new, ad.tensor(th_new), state.theta_y)
    new_costate = Costate(ad.tensor(z_new), ad.tensor(wh_new), costate.omega_y)
    return StepResult(new_state, new_costate, h_new, loss_v)


# ---------------------------------------------------------------------------
# stored trajectory + reverse replay


class StoredTrajectory:
    """Neuron states of the forward pass, keyed by integer step index.

    Index ``k`` holds ``h_k``, the state *before* token ``k`` is consumed
    (``h_0`` is the initial state, ``h_n`` the state after the last token).
    """

    def __init__(self):
        self._states: dict = {}

    def store(self, k: int, h):
        self._states[int(k)] = ad.tensor(h)

    def lookup(self, k: int) -> np.ndarray:
        try:
            return self._states[int(k)]
        except KeyError:
            raise ReplayError(f"no stored state for index {k}; stored: {sorted(self._states)}") from None

    def __len__(self) -> int:
        return len(self._states)

    def __contains__(self, k) -> bool:
        return int(k) in self._states

    def clear(self):
        self._states.clear()


class ReplayResult(NamedTuple):
    state: ModelState
    costate: Costate
    losses: list  # forward-pass loss per token (None where no target)
    outputs: list
    trajectory: StoredTrajectory
    psi_times: list  # time reflection evaluated at each replayed item


def _hamiltonian_partials(spec, u_out, h, params_h, params_y, z, u_next, target, phi, loss, tau):
    """Partials of ``phi L(f_y(h), y) + z . hdot(u_next, h)`` w.r.t. ``h`` and ``theta_y``."""
    tape = Tape()
    hv = tape.leaf(h)
    py = [tape.leaf(p) for p in params_y]
    terms = []
    loss_v = None
    y = output_map(spec, ad.tensor(u_out), hv, py)
    if target is not None:
        lv = loss(y, np.asarray(target, dtype=np.float64))
        loss_v = float(ad.value_of(lv))
        terms.append(ad.scale(lv, phi))
    if z is not None:
        hdot, _ = state_rate(spec, ad.tensor(u_next), hv, params_h, tau)
        terms.append(ad.matmul(z, hdot))
    if not terms:
        return np.zeros_like(h), np.zeros(sum(p.size for p in params_y)), loss_v, ad.value_of(y)
    H = ad.sum_scalars(terms)
    tape.finalize(H)
    grads = ad.backward(tape)
    dty = np.concatenate([grads[p].ravel() for p in py]) if py else np.zeros(0)
    return grads[hv], dty, loss_v, ad.value_of(y)


def _param_partial(spec, u, h, theta_h, z, tau):
    """``d/dtheta_h`` of ``z . hdot(u, h, theta_h)``."""
    tape = Tape()
    ph = [tape.leaf(p) for p in spec.unpack(theta_h, "h")]
    hdot, _ = state_rate(spec, ad.tensor(u), h, ph, tau)
    tape.finalize(hdot)
    grads = ad.backward(tape, z)
    return np.concatenate([grads[p].ravel() for p in ph])


def replay_sequence(seq, spec: NetSpec, cfg: HLConfig, loss: LossSpec, state: ModelState,
                    costate: Costate | None = None, window: int | None = None, reset_omega: bool = True,
                    start_time: float = 0.0) -> ReplayResult:
    """Stream ``seq`` forward then (part of it) backward and update once.

    ``seq`` is a list of ``(u, y_hat)`` tokens. Forward tokens only move the
    neuron state (the costate is frozen and ``beta`` is zero). At the pivot
    (the last token) ``z`` is cleared, and ``omega`` too when
    ``reset_omega``. From there on, replayed item ``j`` (token
    ``c = n-1-j``) integrates

    * ``z`` with the Hamiltonian ``phi L(f_y(h_{c+1}), y_c) + z . hdot(u_{c+1}, h_{c+1})``
      (the second term absent at the pivot),
    * ``omega_y`` with the same Hamiltonian,
    * ``omega_h`` with ``z' . hdot(u_c, h_c)`` using the freshly updated ``z'``,

    where ``h_k`` are the forward states read back from the stored
    trajectory. The weights move only on the last replayed item.
    """
    n = len(seq)
    if n == 0:
        raise StreamError("empty sequence")
    r = n if window is None else window
    if not 1 <= r <= n:
        raise StreamError(f"window must be in [1, {n}], got {r}")
    tau = cfg.tau
    if tau is None:
        raise ValueError("replay needs a fixed tau")
    s = float(cfg.s)
    order = replay_order(n, r)
    times = [start_time + p * tau for p in range(len(order))]
    t_pivot = times[n - 1]

    costate = Costate.zeros_like(state) if costate is None else costate
    params_h = spec.unpack(state.theta_h, "h")
    params_y = spec.unpack(state.theta_y, "y")

    traj = StoredTrajectory()
    traj.store(0, state.h)
    h = state.h
    for k in range(n):
        h = ad.tensor(state_map(spec, ad.tensor(seq[k][0]), h, params_h))
        traj.store(k + 1, h)

    costate = reset_costate(costate, "both" if reset_omega else "z")
    z = costate.z
    wh, wy = costate.omega_h, costate.omega_y
    losses: list = [None] * n
    outputs: list = [None] * n
    psi_times = []
    theta_h, theta_y = state.theta_h, state.theta_y
    n_h = theta_h.shape[0]

    for j in range(r):
        p = n - 1 + j
        c = order[p]
        t = times[p]
        if p > n - 1:
            psi_times.append(psi_map(t, t_pivot, tau))
        u_c, y_c = seq[c]
        h_s = traj.lookup(c + 1)
        h_c = traj.lookup(c)
        z_prev = None if j == 0 else z
        u_next = seq[c + 1][0] if j > 0 else u_c
        phi = cfg.phi_at(t) if y_c is not None else 1.0
        dh, dty, loss_v, y = _hamiltonian_partials(spec, u_c, h_s, params_h, params_y, z_prev, u_next, y_c,
                                                   phi, loss, tau)
        losses[c], outputs[c] = loss_v, y
        z_new = z + tau * (-s * dh - cfg.eta * z)
        wy = wy + tau * (-s * dty - cfg.eta * wy)
        dth = _param_partial(spec, u_c, h_c, theta_h, z_new, tau)
        wh = wh + tau * (-s * dth - cfg.eta * wh)
        z = z_new

        if j == r - 1:
            beta = cfg.beta_vector(n_h + theta_y.shape[0], t)
            if cfg.ordering == "sequential":
                theta_h = theta_h - tau * beta[:n_h] * wh
                theta_y = theta_y - tau * beta[n_h:] * wy
            # simultaneous ordering would use the costate before this item,
            # which is zero at the pivot; kept for completeness
            else:
                theta_h = theta_h - tau * beta[:n_h] * costate.omega_h
                theta_y = theta_y - tau * beta[n_h:] * costate.omega_y

    new_state = ModelState(traj.lookup(n), ad.tensor(theta_h), ad.tensor(theta_y))
    new_costate = Costate(ad.tensor(z), ad.tensor(wh), ad.tensor(wy))
    return ReplayResult(new_state, new_costate, losses, outputs, traj, psi_times)


def hl_bptt_replay(seq, spec: NetSpec, cfg: HLConfig, loss: LossSpec, state: ModelState,
                   targets_oracle: bool = True):
    """Full reverse replay of one sequence.

    Returns ``(omega_final, grad_oracle_diff)`` where ``omega_final`` is the
    concatenated ``[omega_h, omega_y]`` after the last replayed item and
    ``grad_oracle_diff`` its largest absolute deviation from the BPTT
    gradient, relative to the largest gradient entry (``None`` when
    ``targets_oracle`` is false).
    """
    res = replay_sequence(seq, spec, cfg, loss, state)
    omega = res.costate.omega
    if not targets_oracle:
        return omega, None
    from .oracles import bptt_gradients

    g, _ = bptt_gradients([u for u, _ in seq], [y for _, y in seq], state.h, state.theta, spec, loss)
    return omega, relative_gap(omega, g)


def truncated_replay(seq, r: int, spec: NetSpec, cfg: HLConfig, loss: LossSpec, state: ModelState,
                     costate: Costate | None = None, reset_omega: bool = True) -> ReplayResult:
    """Stream all tokens, then the last ``r - 1`` in reverse; one update at the end."""
    if not 1 <= r <= len(seq):
        raise StreamError(f"window must be in [1, {len(seq)}], got {r}")
    return replay_sequence(seq, spec, cfg, loss, state, costate, window=r, reset_omega=reset_omega)


def relative_gap(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(b))) if b.size else 0.0, np.finfo(float).tiny)
    return float(np.max(np.abs(a - b))) / scale if a.size else 0.0


# ---------------------------------------------------------------------------
# driver


def _split_sequences(source: StreamSource) -> list:
    seqs, cur = [], []
    for it in source:
        cur.append(it)
        if it.delta:
            seqs.append(cur)
            cur = []
    if cur:
        seqs.append(cur)
    return seqs


def run_mode(mode: RecoveryMode, source: StreamSource, spec: NetSpec, cfg: HLConfig, loss: LossSpec,
             state: ModelState, record_outputs: bool = False) -> RunRecord:
    """Run a construction over ``source`` and log every weight update.

    The parity constructions always use sequential ordering. For the
    replay modes ``source`` is split into sequences at ``delta == 1`` tags;
    each sequence starts from a zero neuron state and produces one row.
    """
    check_mode_spec(mode, spec)
    cfg = replace(cfg, ordering="sequential")
    if mode.beta_schedule == "final_only" and not mode.is_replay:
        raise ModeError("final_only beta applies to the replay modes")
    rec = RunRecord(state.theta)
    costate = Costate.zeros_like(state)

    if not mode.is_replay:
        for k, item in enumerate(source):
            if mode.clears_omega:
                costate = reset_costate(costate, "omega")
            if mode.kind == "ff_state":
                res = ff_state_step(state, costate, item, cfg, loss, spec)
            else:
                res = hl_step(state, costate, item, cfg, loss, spec)
            state, costate = res.state, res.costate
            rec.append(k, item.timestamp, res.loss, accuracy(res.y, item.y_hat), state.theta,
                       res.y if record_outputs else None)
        return rec

    window = mode.window if mode.kind == "rnn_truncated" else None
    t0 = 0.0
    for k, seq_items in enumerate(_split_sequences(source)):
        seq = [(it.u, it.y_hat) for it in seq_items]
        w = None if window is None else min(window, len(seq))
        state = replace(state, h=ad.tensor(np.zeros(spec.state_dim)))
        res = replay_sequence(seq, spec, cfg, loss, state, costate, window=w,
                              reset_omega=mode.clears_omega, start_time=t0)
        state, costate = res.state, res.costate
        t0 += (len(seq) + (w or len(seq)) - 1) * cfg.tau
        seq_losses = [x for x in res.losses if x is not None]
        last_target = seq[-1][1]
        acc = accuracy(res.outputs[-1], last_target) if res.outputs[-1] is not None else None
        rec.append(k, t0 - cfg.tau, float(np.sum(seq_losses)) if seq_losses else None, acc, state.theta,
                   res.outputs[-1] if record_outputs else None)
    return rec


# ---------------------------------------------------------------------------
# unfolding helpers


def unfolded_spec(n_in: int, n_hidden: int, steps: int, n_out: int, activation: str = "tanh") -> NetSpec:
    """The recurrent net unrolled over ``steps`` tokens, plus a dense readout."""
    return NetSpec(input_dim=n_in * steps,
                   output_layers=(UnrolledRNN(n_in, n_hidden, steps, activation), Dense(n_hidden, n_out)),
                   output_source="u")


def flatten_sequence(tokens) -> np.ndarray:
    return ad.tensor(np.concatenate([np.asarray(u, dtype=np.float64).ravel() for u in tokens]))
