"""State network, output network and the model state they act on.

A model is split into a *state network* computing the state velocity
``hdot = f_h(u, h, theta_h)`` and a recurrence-free *output network*
``y = f_y(u, h, theta_y)``. Both are described by a :class:`NetSpec`, an
immutable list of layer descriptors plus wiring options.

All evaluation helpers accept either plain arrays or tape :class:`Var`
handles for ``h`` and the per-layer parameters, so the very same code is
used for plain evaluation and for recording a differentiable trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor_ad as ad
from .tensor_ad import Tape, Var

ACTIVATIONS = ("identity", "tanh", "relu")


class SpecError(ValueError):
    """Invalid network description or incompatible model state."""


# ---------------------------------------------------------------------------
# layer descriptors


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int
    activation: str = "identity"
    bias: bool = True

    @property
    def param_shapes(self) -> list:
        shapes = [(self.n_out, self.n_in)]
        if self.bias:
            shapes.append((self.n_out,))
        return shapes

    def fan_in(self) -> int:
        return self.n_in

    def apply(self, x, params):
        z = ad.matmul(params[0], x)
        if self.bias:
            z = ad.add(z, params[1])
        return _activate(z, self.activation)


@dataclass(frozen=True)
class RecurrentCell:
    """Simple recurrent cell ``h' = act(W_u u + W_h h + b)``."""

    n_in: int
    n_hidden: int
    activation: str = "tanh"

    @property
    def n_out(self) -> int:
        return self.n_hidden

    @property
    def param_shapes(self) -> list:
        return [(self.n_hidden, self.n_in), (self.n_hidden, self.n_hidden), (self.n_hidden,)]

    def fan_in(self) -> int:
        return self.n_hidden

    def step(self, u, h, params):
        z = ad.add(ad.add(ad.matmul(params[0], u), ad.matmul(params[1], h)), params[2])
        return _activate(z, self.activation)


@dataclass(frozen=True)
class UnrolledRNN:
    """A :class:`RecurrentCell` unrolled over ``steps`` tokens.

    Consumes the flattened sequence (``steps * n_in`` values) and returns the
    final hidden state, starting from a zero state.
    """

    n_in: int
    n_hidden: int
    steps: int
    activation: str = "tanh"

    @property
    def cell(self) -> RecurrentCell:
        return RecurrentCell(self.n_in, self.n_hidden, self.activation)

    @property
    def n_out(self) -> int:
        return self.n_hidden

    @property
    def param_shapes(self) -> list:
        return self.cell.param_shapes

    def fan_in(self) -> int:
        return self.n_hidden

    def apply(self, x, params):
        cell = self.cell
        xv = ad.value_of(x)
        if isinstance(x, Var):
            raise SpecError("UnrolledRNN input must be data, not a traced value")
        h = np.zeros(self.n_hidden)
        for k in range(self.steps):
            h = cell.step(xv[k * self.n_in:(k + 1) * self.n_in], h, params)
        return h


@dataclass(frozen=True)
class Identity:
    n: int

    @property
    def n_in(self) -> int:
        return self.n

    @property
    def n_out(self) -> int:
        return self.n

    @property
    def param_shapes(self) -> list:
        return []

    def fan_in(self) -> int:
        return 1

    def apply(self, x, params):
        return ad.identity(x)


@dataclass(frozen=True)
class Selector:
    """Pick a subset of the incoming coordinates (a fixed 0/1 matrix)."""

    n_in: int
    indices: tuple

    @property
    def n_out(self) -> int:
        return len(self.indices)

    @property
    def param_shapes(self) -> list:
        return []

    def fan_in(self) -> int:
        return 1

    def matrix(self) -> np.ndarray:
        m = np.zeros((len(self.indices), self.n_in))
        m[np.arange(len(self.indices)), list(self.indices)] = 1.0
        m.flags.writeable = False
        return m

    def apply(self, x, params):
        return ad.matmul(self.matrix(), x)


LAYER_KINDS = {
    "dense": Dense,
    "recurrent": RecurrentCell,
    "unrolled_rnn": UnrolledRNN,
    "identity": Identity,
    "selector": Selector,
}


def _activate(z, kind: str):
    if kind == "tanh":
        return ad.tanh(z)
    if kind == "relu":
        return ad.relu(z)
    if kind == "identity":
        return z
    raise SpecError(f"unknown activation {kind!r}")


def _layer_kind(layer) -> str:
    for name, cls in LAYER_KINDS.items():
        if isinstance(layer, cls):
            return name
    raise SpecError(f"unsupported layer {layer!r}")


# ---------------------------------------------------------------------------
# spec


@dataclass(frozen=True)
class NetSpec:
    """Immutable description of the state network and output network.

    ``state_wiring`` is ``"chain"`` (layers applied in sequence to the
    source selected by ``state_source``) or ``"layered"`` (the state holds
    the outputs of every layer; layer ``k`` reads the state slice of layer
    ``k - 1``, layer 0 reads ``u``). ``residual_mode="instantaneous"``
    turns the state network into the scaled residual map
    ``(-h + fhat) / tau``.
    """

    input_dim: int
    state_dim: int = 0
    state_layers: tuple = ()
    output_layers: tuple = ()
    state_wiring: str = "chain"
    state_source: str = "u"
    output_source: str = "h"
    residual_mode: str = "plain"
    group_partition: tuple | None = None
    _slices: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "state_layers", tuple(self.state_layers))
        object.__setattr__(self, "output_layers", tuple(self.output_layers))
        if self.group_partition is not None:
            object.__setattr__(self, "group_partition", tuple(tuple(int(i) for i in g) for g in self.group_partition))
        self._validate()

    # -- validation ---------------------------------------------------------

    def _validate(self):
        if self.input_dim < 0 or self.state_dim < 0:
            raise SpecError("dimensions must be non-negative")
        if self.residual_mode not in ("plain", "instantaneous"):
            raise SpecError(f"residual_mode must be 'plain' or 'instantaneous', got {self.residual_mode!r}")
        if self.output_source not in ("h", "u", "uh"):
            raise SpecError(f"output_source must be 'h', 'u' or 'uh', got {self.output_source!r}")
        for layer in self.state_layers + self.output_layers:
            act = getattr(layer, "activation", "identity")
            if act not in ACTIVATIONS:
                raise SpecError(f"unknown activation {act!r} in {layer!r}")
        for layer in self.output_layers:
            if isinstance(layer, RecurrentCell):
                raise SpecError("output network must be recurrence-free")

        if self.state_dim == 0:
            if self.state_layers:
                raise SpecError("state layers given but state_dim is 0")
        elif self.state_wiring == "chain":
            if not self.state_layers:
                raise SpecError("a non-empty state needs state layers")
            if self.state_source not in ("u", "h", "uh"):
                raise SpecError(f"state_source must be 'u', 'h' or 'uh', got {self.state_source!r}")
            first = self.state_layers[0]
            if isinstance(first, RecurrentCell):
                if self.state_source != "uh":
                    raise SpecError("a recurrent cell reads both u and h: use state_source='uh'")
                if first.n_in != self.input_dim or first.n_hidden != self.state_dim:
                    raise SpecError("recurrent cell dimensions do not match input_dim/state_dim")
            else:
                src = {"u": self.input_dim, "h": self.state_dim, "uh": self.input_dim + self.state_dim}[self.state_source]
                self._check_chain(self.state_layers, src, "state")
            if self.state_layers[-1].n_out != self.state_dim:
                raise SpecError(f"state network outputs {self.state_layers[-1].n_out} values, state_dim is {self.state_dim}")
            for a, b in zip(self.state_layers, self.state_layers[1:]):
                if a.n_out != b.n_in:
                    raise SpecError(f"state layer dims do not chain: {a!r} -> {b!r}")
        elif self.state_wiring == "layered":
            if not all(isinstance(l, Dense) for l in self.state_layers):
                raise SpecError("layered wiring supports dense layers only")
            self._check_chain(self.state_layers, self.input_dim, "state")
            total = sum(l.n_out for l in self.state_layers)
            if total != self.state_dim:
                raise SpecError(f"layered state holds {total} neurons, state_dim is {self.state_dim}")
        else:
            raise SpecError(f"state_wiring must be 'chain' or 'layered', got {self.state_wiring!r}")

        src = {"u": self.input_dim, "h": self.state_dim, "uh": self.input_dim + self.state_dim}[self.output_source]
        if self.output_layers:
            self._check_chain(self.output_layers, src, "output")

        if self.group_partition is not None:
            flat = sorted(i for g in self.group_partition for i in g)
            if flat != list(range(self.state_dim)) or any(len(g) == 0 for g in self.group_partition):
                raise SpecError("group_partition must cover every state neuron exactly once with non-empty groups")

        slices = []
        lo = 0
        for layer in self.state_layers:
            slices.append((lo, lo + layer.n_out))
            lo += layer.n_out
        object.__setattr__(self, "_slices", tuple(slices))

    @staticmethod
    def _check_chain(layers, n_src, which):
        n = n_src
        for layer in layers:
            expected = layer.n_in * layer.steps if isinstance(layer, UnrolledRNN) else layer.n_in
            if expected != n:
                raise SpecError(f"{which} layer {layer!r} expects {expected} inputs, receives {n}")
            n = layer.n_out

    # -- parameters ---------------------------------------------------------

    @staticmethod
    def _shapes(layers) -> list:
        return [s for layer in layers for s in layer.param_shapes]

    @property
    def n_params_h(self) -> int:
        return sum(int(np.prod(s)) for s in self._shapes(self.state_layers))

    @property
    def n_params_y(self) -> int:
        return sum(int(np.prod(s)) for s in self._shapes(self.output_layers))

    @property
    def output_dim(self) -> int:
        if self.output_layers:
            return self.output_layers[-1].n_out
        return {"u": self.input_dim, "h": self.state_dim, "uh": self.input_dim + self.state_dim}[self.output_source]

    @property
    def n_groups(self) -> int:
        return len(self.group_partition) if self.group_partition is not None else 0

    def unpack(self, theta, which: str) -> list:
        """Split a flat parameter vector into per-layer arrays (views)."""
        layers = self.state_layers if which == "h" else self.output_layers
        theta = np.asarray(theta, dtype=np.float64)
        expected = self.n_params_h if which == "h" else self.n_params_y
        if theta.shape != (expected,):
            raise SpecError(f"theta_{which} has shape {theta.shape}, expected ({expected},)")
        out = []
        lo = 0
        for shape in self._shapes(layers):
            n = int(np.prod(shape))
            out.append(theta[lo:lo + n].reshape(shape))
            lo += n
        return out

    def init_params(self, rng: np.random.Generator) -> tuple:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""

        def draw(layers):
            parts = []
            for layer in layers:
                bound = 1.0 / np.sqrt(max(layer.fan_in(), 1))
                for shape in layer.param_shapes:
                    parts.append(rng.uniform(-bound, bound, size=shape).ravel())
            return np.concatenate(parts) if parts else np.zeros(0)

        return draw(self.state_layers), draw(self.output_layers)

    def group_mask(self, step_index: int) -> np.ndarray:
        if self.group_partition is None:
            raise SpecError("masked update requires a group_partition")
        mask = np.zeros(self.state_dim)
        mask[list(self.group_partition[step_index % len(self.group_partition)])] = 1.0
        mask.flags.writeable = False
        return mask

    def layer_partition(self) -> tuple:
        """One group per state layer, in layer order."""
        return tuple(tuple(range(lo, hi)) for lo, hi in self._slices)

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        def layer_dict(layer):
            d = {"kind": _layer_kind(layer)}
            for k, v in layer.__dict__.items():
                d[k] = list(v) if isinstance(v, tuple) else v
            return d

        d = {
            "input_dim": self.input_dim,
            "state_dim": self.state_dim,
            "state_layers": [layer_dict(l) for l in self.state_layers],
            "output_layers": [layer_dict(l) for l in self.output_layers],
            "state_wiring": self.state_wiring,
            "state_source": self.state_source,
            "output_source": self.output_source,
            "residual_mode": self.residual_mode,
        }
        if self.group_partition is not None:
            d["group_partition"] = [list(g) for g in self.group_partition]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        def layer(ld):
            ld = dict(ld)
            kind = ld.pop("kind", None)
            if kind not in LAYER_KINDS:
                raise SpecError(f"unknown layer kind {kind!r}; expected one of {sorted(LAYER_KINDS)}")
            if "indices" in ld:
                ld["indices"] = tuple(ld["indices"])
            try:
                return LAYER_KINDS[kind](**ld)
            except TypeError as exc:
                raise SpecError(f"bad {kind} layer: {exc}") from None

        d = dict(d)
        known = {"input_dim", "state_dim", "state_layers", "output_layers", "state_wiring", "state_source",
                 "output_source", "residual_mode", "group_partition"}
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown NetSpec keys: {sorted(extra)}")
        if "input_dim" not in d:
            raise SpecError("NetSpec needs 'input_dim'")
        d["state_layers"] = tuple(layer(l) for l in d.get("state_layers", ()))
        d["output_layers"] = tuple(layer(l) for l in d.get("output_layers", ()))
        return cls(**d)


# ---------------------------------------------------------------------------
# model state


@dataclass(frozen=True)
class ModelState:
    """Neuron state ``h`` and the parameters ``theta = [theta_h, theta_y]``."""

    h: np.ndarray
    theta_h: np.ndarray
    theta_y: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.theta_h, self.theta_y])

    def with_theta(self, theta) -> "ModelState":
        n = self.theta_h.shape[0]
        theta = np.asarray(theta, dtype=np.float64)
        return replace(self, theta_h=ad.tensor(theta[:n]), theta_y=ad.tensor(theta[n:]))

    def shapes(self) -> tuple:
        return self.h.shape, self.theta_h.shape, self.theta_y.shape


def make_state(spec: NetSpec, h=None, theta_h=None, theta_y=None) -> ModelState:
    h = np.zeros(spec.state_dim) if h is None else h
    theta_h = np.zeros(spec.n_params_h) if theta_h is None else theta_h
    theta_y = np.zeros(spec.n_params_y) if theta_y is None else theta_y
    state = ModelState(ad.tensor(h), ad.tensor(theta_h), ad.tensor(theta_y))
    check_state(spec, state)
    return state


def init_state(spec: NetSpec, seed: int = 0, random_h: bool = False, h_scale: float = 1.0) -> ModelState:
    """Fresh model state: initialised weights, ``h_0`` zeros (or random)."""
    rng = np.random.default_rng(seed)
    th, ty = spec.init_params(rng)
    h = rng.uniform(-h_scale, h_scale, size=spec.state_dim) if random_h else np.zeros(spec.state_dim)
    return make_state(spec, h, th, ty)


def check_state(spec: NetSpec, state: ModelState):
    if state.h.shape != (spec.state_dim,):
        raise SpecError(f"h has shape {state.h.shape}, expected ({spec.state_dim},)")
    if state.theta_h.shape != (spec.n_params_h,):
        raise SpecError(f"theta_h has shape {state.theta_h.shape}, expected ({spec.n_params_h},)")
    if state.theta_y.shape != (spec.n_params_y,):
        raise SpecError(f"theta_y has shape {state.theta_y.shape}, expected ({spec.n_params_y},)")


def _check_u(spec: NetSpec, u):
    shape = np.shape(ad.value_of(u))
    if shape != (spec.input_dim,):
        raise SpecError(f"input u has shape {shape}, expected ({spec.input_dim},)")


# ---------------------------------------------------------------------------
# traced evaluation (arrays or Vars)


def _chain(layers, x, params):
    k = 0
    for layer in layers:
        n = len(layer.param_shapes)
        x = layer.apply(x, params[k:k + n])
        k += n
    return x


def _source(kind: str, u, h):
    if kind == "u":
        return u
    if kind == "h":
        return h
    return ad.concat(u, h)


def state_map(spec: NetSpec, u, h, params_h):
    """The raw state-network map ``fhat(u, h, theta_h)``.

    In plain mode this *is* the state velocity; in instantaneous mode it is
    the next state the residual wrapper targets.
    """
    if spec.state_dim == 0:
        return np.zeros(0)
    if spec.state_wiring == "layered":
        outs = []
        k = 0
        for i, layer in enumerate(spec.state_layers):
            if i == 0:
                x = u
            else:
                lo, hi = spec._slices[i - 1]
                sel = np.zeros((hi - lo, spec.state_dim))
                sel[np.arange(hi - lo), np.arange(lo, hi)] = 1.0
                x = ad.matmul(sel, h)
            n = len(layer.param_shapes)
            outs.append(layer.apply(x, params_h[k:k + n]))
            k += n
        return ad.concat(*outs) if len(outs) > 1 else outs[0]
    first = spec.state_layers[0]
    if isinstance(first, RecurrentCell):
        x = first.step(u, h, params_h[:3])
        return _chain(spec.state_layers[1:], x, params_h[3:])
    return _chain(spec.state_layers, _source(spec.state_source, u, h), params_h)


def residual_rate(fhat, h, tau: float):
    """``(-h + fhat) / tau`` as a traced expression."""
    return ad.scale(ad.add(fhat, ad.scale(h, -1.0)), 1.0 / tau)


def state_rate(spec: NetSpec, u, h, params_h, tau: float | None = None, step_index: int | None = None):
    """Traced ``hdot``. Returns ``(hdot, fhat)``."""
    fhat = state_map(spec, u, h, params_h)
    if spec.state_dim == 0:
        return fhat, fhat
    if spec.residual_mode == "instantaneous":
        if tau is None or not tau > 0:
            raise ValueError(f"instantaneous mode needs tau > 0, got {tau}")
        hdot = residual_rate(fhat, h, tau)
    else:
        hdot = fhat
    if step_index is not None:
        hdot = ad.hadamard(spec.group_mask(step_index), hdot)
    return hdot, fhat


def output_map(spec: NetSpec, u, h, params_y):
    src = _source(spec.output_source, u, h)
    if not spec.output_layers:
        return ad.identity(src)
    return _chain(spec.output_layers, src, params_y)


@dataclass
class TracedModel:
    """Leaves for ``h`` and every parameter block on one tape."""

    tape: Tape
    h: Var
    params_h: list
    params_y: list

    def grad_h(self, grads) -> np.ndarray:
        return grads[self.h]

    def grad_theta_h(self, grads) -> np.ndarray:
        return _flat([grads[p] for p in self.params_h])

    def grad_theta_y(self, grads) -> np.ndarray:
        return _flat([grads[p] for p in self.params_y])


def _flat(parts) -> np.ndarray:
    return np.concatenate([p.ravel() for p in parts]) if parts else np.zeros(0)


def trace_model(spec: NetSpec, state: ModelState, tape: Tape | None = None) -> TracedModel:
    tape = Tape() if tape is None else tape
    h = tape.leaf(state.h, "h")
    ph = [tape.leaf(p) for p in spec.unpack(state.theta_h, "h")]
    py = [tape.leaf(p) for p in spec.unpack(state.theta_y, "y")]
    return TracedModel(tape, h, ph, py)


# ---------------------------------------------------------------------------
# public evaluation on arrays


def eval_state_net(u, state: ModelState, spec: NetSpec, tau: float | None = None) -> np.ndarray:
    """State velocity ``hdot = f_h(u, h, theta_h)``."""
    _check_u(spec, u)
    check_state(spec, state)
    hdot, _ = state_rate(spec, ad.tensor(u), state.h, spec.unpack(state.theta_h, "h"), tau)
    return hdot


def eval_output_net(u, state: ModelState, spec: NetSpec) -> np.ndarray:
    """Output ``y = f_y(u, h, theta_y)``; never touches ``state``."""
    _check_u(spec, u)
    check_state(spec, state)
    return output_map(spec, ad.tensor(u), state.h, spec.unpack(state.theta_y, "y"))


def residual_state_fn(u, state: ModelState, tau: float, spec: NetSpec) -> np.ndarray:
    """``(-h + fhat(u, h, theta_h)) / tau`` for instantaneous propagation."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if spec.residual_mode != "instantaneous":
        raise SpecError("residual_state_fn requires residual_mode='instantaneous'")
    return eval_state_net(u, state, spec, tau)


def masked_group_update(u, state: ModelState, step_index: int, tau: float, spec: NetSpec) -> np.ndarray:
    """Residual velocity restricted to group ``step_index mod nu``.

    ``u`` is the sample the caller is repeating for this period, i.e. sample
    number ``step_index // nu`` of the underlying stream.
    """
    if spec.group_partition is None:
        raise SpecError("masked_group_update requires a group_partition")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    _check_u(spec, u)
    check_state(spec, state)
    fhat = state_map(spec, ad.tensor(u), state.h, spec.unpack(state.theta_h, "h"))
    return ad.hadamard(spec.group_mask(step_index), residual_rate(fhat, state.h, tau))


def advance_h(spec: NetSpec, h, hdot, fhat, tau: float, step_index: int | None = None) -> np.ndarray:
    """Euler step for the neuron state.

    Instantaneous mode assigns ``fhat`` directly (only on the active group
    when masked), which is what ``h + tau * (-h + fhat) / tau`` equals in
    exact arithmetic.
    """
    h = ad.value_of(h)
    if spec.state_dim == 0:
        return h
    if spec.residual_mode == "instantaneous":
        fhat = ad.value_of(fhat)
        if step_index is None:
            return ad.tensor(fhat)
        mask = spec.group_mask(step_index)
        return ad.tensor(np.where(mask > 0, fhat, h))
    return ad.tensor(h + tau * ad.value_of(hdot))


def next_state(u, state: ModelState, tau: float, spec: NetSpec, step_index: int | None = None) -> np.ndarray:
    """``h_{t+tau}`` after one Euler step of the state equation."""
    _check_u(spec, u)
    hdot, fhat = state_rate(spec, ad.tensor(u), state.h, spec.unpack(state.theta_h, "h"), tau, step_index)
    return advance_h(spec, state.h, hdot, fhat, tau, step_index)


# ---------------------------------------------------------------------------
# ready-made architectures


def linear_classifier(n_in: int, n_out: int) -> NetSpec:
    """Single dense layer implemented in the output network (h is empty)."""
    return NetSpec(input_dim=n_in, output_layers=(Dense(n_in, n_out),), output_source="u")


def mlp_output(n_in: int, n_hidden: int, n_out: int, activation: str = "tanh") -> NetSpec:
    """One-hidden-layer MLP implemented in the output network."""
    return NetSpec(
        input_dim=n_in,
        output_layers=(Dense(n_in, n_hidden, activation), Dense(n_hidden, n_out)),
        output_source="u",
    )


def as_state_net(output_spec: NetSpec) -> NetSpec:
    """Move a feed-forward output network into the state network.

    The state becomes the network output, the output map is the identity,
    and the residual wrapper cancels the integration step.
    """
    if output_spec.state_dim != 0 or output_spec.output_source != "u":
        raise SpecError("expected a feed-forward output network reading u")
    layers = output_spec.output_layers
    return NetSpec(
        input_dim=output_spec.input_dim,
        state_dim=layers[-1].n_out,
        state_layers=layers,
        state_source="u",
        output_source="h",
        residual_mode="instantaneous",
    )


def rnn_state_net(n_in: int, n_hidden: int, activation: str = "tanh", readout: int | None = None) -> NetSpec:
    """Recurrent cell in the state network, identity (or dense) output."""
    out = () if readout is None else (Dense(n_hidden, readout),)
    return NetSpec(
        input_dim=n_in,
        state_dim=n_hidden,
        state_layers=(RecurrentCell(n_in, n_hidden, activation),),
        state_source="uh",
        output_source="h",
        output_layers=out,
        residual_mode="instantaneous",
    )


def layered_mlp(n_in: int, widths: Sequence[int], activation: str = "tanh") -> NetSpec:
    """Feed-forward stack whose state holds every layer's output, one group per layer."""
    layers = []
    n = n_in
    for w in widths:
        layers.append(Dense(n, w, activation))
        n = w
    total = sum(widths)
    spec = NetSpec(
        input_dim=n_in,
        state_dim=total,
        state_layers=tuple(layers),
        state_wiring="layered",
        output_layers=(Selector(total, tuple(range(total - widths[-1], total))),),
        residual_mode="instantaneous",
    )
    return replace(spec, group_partition=spec.layer_partition())
