"""Experiment configuration files (YAML) with line-numbered diagnostics.

Example::

    name: gd-a-linear
    scenario: GD-a            # GD-a | GD-b | Mom-a | Mom-b | custom
    mode: ff_output           # ff_output | ff_state | rnn_unfold | rnn_hl_bptt | rnn_truncated
    model: {kind: linear}     # linear | mlp | rnn  (+ hidden, activation)
    dataset: {name: iris_like, seed: 0}
    epochs: 40
    seed: 0
    shuffle_seed: 0

``sgd`` (``gamma``, ``mu``, ``rho``) and ``tau`` are required with
``scenario: custom`` and must agree with the preset otherwise. See
``docs/config.md`` for every key.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..recovery import KINDS

SCENARIOS = {
    "GD-a": {"gamma": 0.01, "mu": 0.0, "rho": 0.0, "tau": 1.0},
    "GD-b": {"gamma": 0.001, "mu": 0.0, "rho": 0.0, "tau": 0.5},
    "Mom-a": {"gamma": 0.01, "mu": 0.05, "rho": 0.6, "tau": 1.0},
    "Mom-b": {"gamma": 0.01, "mu": 0.1, "rho": 0.5, "tau": 0.5},
}
MODEL_KINDS = ("linear", "mlp", "rnn")
DATASET_NAMES = ("iris_like", "digits_like", "token_sequences", "csv", "jsonl", "sequences_jsonl")
LOSSES = ("softmax_cross_entropy", "mse")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.message = message
        self.line = line
        self.source = source
        where = f"{source or '<config>'}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(where + message)


@dataclass(frozen=True)
class ModelRef:
    kind: str = "linear"
    hidden: int = 8
    activation: str = "tanh"


@dataclass(frozen=True)
class DatasetRef:
    name: str = "iris_like"
    path: str | None = None
    seed: int = 0
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Tolerance:
    max_abs_dtheta: float | None = None
    mean_abs_dtheta: float | None = None
    loss_gap: float | None = None


@dataclass(frozen=True)
class SGDParams:
    gamma: float
    mu: float = 0.0
    rho: float = 0.0


def default_tolerance(scenario: str) -> Tolerance:
    if scenario.startswith("Mom"):
        return Tolerance(mean_abs_dtheta=1e-8)
    return Tolerance(max_abs_dtheta=1e-9, loss_gap=1e-9)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scenario: str
    sgd: SGDParams
    tau: float
    mode: str = "ff_output"
    window: int | None = None
    model: ModelRef = ModelRef()
    dataset: DatasetRef = DatasetRef()
    loss: str = "softmax_cross_entropy"
    buffer_init: str = "gradient"
    epochs: int = 40
    seed: int = 0
    shuffle_seed: int | None = 0
    output_dir: str | None = None
    tolerance: Tolerance = Tolerance()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"] = {k: v for k, v in d["dataset"].items() if not (k == "path" and v is None)}
        d["tolerance"] = {k: v for k, v in d["tolerance"].items() if v is not None}
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_scenario(self, scenario: str) -> "ExperimentConfig":
        """Same experiment under another preset (tolerances reset to its default)."""
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}")
        p = SCENARIOS[scenario]
        return replace(self, scenario=scenario, sgd=SGDParams(p["gamma"], p["mu"], p["rho"]), tau=p["tau"],
                       tolerance=default_tolerance(scenario), name=f"{self.name.split('@')[0]}@{scenario}")


# ---------------------------------------------------------------------------
# parsing


class _Lines:
    """Maps key paths to source lines using the composed YAML node tree."""

    def __init__(self, text: str):
        self.lines: dict = {}
        try:
            node = yaml.compose(text)
        except yaml.YAMLError:
            node = None
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = (*path, k.value)
                self.lines[key] = k.start_mark.line + 1
                self._walk_value(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, (*path, i))

    def _walk_value(self, node, path):
        if isinstance(node, (yaml.MappingNode, yaml.SequenceNode)):
            keep = self.lines[path]
            self._walk(node, path)
            self.lines[path] = keep

    def get(self, path) -> int | None:
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)


def _type_error(path, expected, value, lines, source):
    return ConfigError(f"'{'.'.join(map(str, path))}' must be {expected}, got {value!r}", lines.get(path), source)


def _number(d, key, path, lines, source, default=None, positive=False, nonneg=False, allow_none=False):
    if key not in d:
        return default
    v = d[key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(float(v)):
        raise _type_error((*path, key), "a finite number", v, lines, source)
    v = float(v)
    if positive and not v > 0:
        raise _type_error((*path, key), "positive", v, lines, source)
    if nonneg and v < 0:
        raise _type_error((*path, key), "non-negative", v, lines, source)
    return v


def _integer(d, key, path, lines, source, default=None, minimum=None, allow_none=False):
    if key not in d:
        return default
    v = d[key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise _type_error((*path, key), "an integer", v, lines, source)
    if minimum is not None and v < minimum:
        raise _type_error((*path, key), f">= {minimum}", v, lines, source)
    return v


def _choice(d, key, path, options, lines, source, default=None):
    if key not in d:
        return default
    v = d[key]
    if v not in options:
        raise ConfigError(f"'{'.'.join(map(str, (*path, key)))}' must be one of {list(options)}, got {v!r}",
                          lines.get((*path, key)), source)
    return v


def _mapping(d, key, path, allowed, lines, source) -> dict:
    v = d.get(key, {})
    if v is None:
        v = {}
    if not isinstance(v, dict):
        raise _type_error((*path, key), "a mapping", v, lines, source)
    _no_extra(v, (*path, key), allowed, lines, source)
    return v


def _no_extra(d, path, allowed, lines, source):
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown key '{'.'.join(map(str, (*path, k)))}'; allowed: {sorted(allowed)}",
                              lines.get((*path, k)), source)


TOP_KEYS = {f.name for f in fields(ExperimentConfig)}


def from_dict(d: dict, lines: _Lines | None = None, source: str | None = None) -> ExperimentConfig:
    lines = lines or _Lines("")
    if not isinstance(d, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    _no_extra(d, (), TOP_KEYS, lines, source)

    scenario = d.get("scenario", "custom")
    if scenario not in (*SCENARIOS, "custom"):
        raise ConfigError(f"'scenario' must be one of {[*SCENARIOS, 'custom']}, got {scenario!r}",
                          lines.get(("scenario",)), source)
    sgd_d = _mapping(d, "sgd", (), {"gamma", "mu", "rho"}, lines, source)
    gamma = _number(sgd_d, "gamma", ("sgd",), lines, source, positive=True)
    mu = _number(sgd_d, "mu", ("sgd",), lines, source, nonneg=True)
    rho = _number(sgd_d, "rho", ("sgd",), lines, source, nonneg=True)
    tau = _number(d, "tau", (), lines, source, positive=True)
    if scenario == "custom":
        if gamma is None or tau is None:
            raise ConfigError("scenario 'custom' needs sgd.gamma and tau", lines.get(("scenario",)) or 1, source)
        sgd = SGDParams(gamma, mu or 0.0, rho or 0.0)
    else:
        p = SCENARIOS[scenario]
        for key, val, path in (("gamma", gamma, ("sgd", "gamma")), ("mu", mu, ("sgd", "mu")),
                               ("rho", rho, ("sgd", "rho")), ("tau", tau, ("tau",))):
            if val is not None and val != p[key]:
                raise ConfigError(f"'{'.'.join(path)}' = {val} conflicts with scenario {scenario} ({key} = {p[key]})",
                                  lines.get(path), source)
        sgd = SGDParams(p["gamma"], p["mu"], p["rho"])
        tau = p["tau"]
    if sgd.rho > 1:
        raise ConfigError(f"'sgd.rho' must lie in [0, 1], got {sgd.rho}", lines.get(("sgd", "rho")), source)

    mode = _choice(d, "mode", (), KINDS, lines, source, "ff_output")
    window = _integer(d, "window", (), lines, source, None, minimum=1, allow_none=True)
    if mode == "rnn_truncated" and window is None:
        raise ConfigError("mode 'rnn_truncated' needs 'window'", lines.get(("mode",)), source)

    m = _mapping(d, "model", (), {"kind", "hidden", "activation"}, lines, source)
    model = ModelRef(
        _choice(m, "kind", ("model",), MODEL_KINDS, lines, source, "linear"),
        _integer(m, "hidden", ("model",), lines, source, 8, minimum=1),
        _choice(m, "activation", ("model",), ("tanh", "relu", "identity"), lines, source, "tanh"),
    )
    ds = _mapping(d, "dataset", (), {"name", "path", "seed", "options"}, lines, source)
    options = ds.get("options") or {}
    if not isinstance(options, dict):
        raise _type_error(("dataset", "options"), "a mapping", options, lines, source)
    dataset = DatasetRef(
        _choice(ds, "name", ("dataset",), DATASET_NAMES, lines, source, "iris_like"),
        ds.get("path"),
        _integer(ds, "seed", ("dataset",), lines, source, 0),
        dict(options),
    )
    if dataset.name in ("csv", "jsonl", "sequences_jsonl") and not dataset.path:
        raise ConfigError(f"dataset '{dataset.name}' needs a path", lines.get(("dataset", "name")), source)

    tol_d = _mapping(d, "tolerance", (), {"max_abs_dtheta", "mean_abs_dtheta", "loss_gap"}, lines, source)
    if tol_d:
        tol = Tolerance(*(_number(tol_d, k, ("tolerance",), lines, source, None, nonneg=True, allow_none=True)
                          for k in ("max_abs_dtheta", "mean_abs_dtheta", "loss_gap")))
    else:
        tol = default_tolerance(scenario if scenario != "custom" else ("Mom" if sgd.mu or sgd.rho else "GD"))

    name = d.get("name", "experiment")
    if not isinstance(name, str):
        raise _type_error(("name",), "a string", name, lines, source)
    out = d.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise _type_error(("output_dir",), "a string", out, lines, source)

    cfg = ExperimentConfig(
        name=name,
        scenario=scenario,
        sgd=sgd,
        tau=tau,
        mode=mode,
        window=window,
        model=model,
        dataset=dataset,
        loss=_choice(d, "loss", (), LOSSES, lines, source, "softmax_cross_entropy"),
        buffer_init=_choice(d, "buffer_init", (), ("gradient", "zero"), lines, source, "gradient"),
        epochs=_integer(d, "epochs", (), lines, source, 40, minimum=0),
        seed=_integer(d, "seed", (), lines, source, 0),
        shuffle_seed=_integer(d, "shuffle_seed", (), lines, source, 0, allow_none=True),
        output_dir=out,
        tolerance=tol,
    )
    _check_combination(cfg, lines, source)
    return cfg


def _check_combination(cfg: ExperimentConfig, lines, source):
    if cfg.sgd.mu > 1 or cfg.sgd.rho >= 1:
        raise ConfigError(f"sgd parameters (mu={cfg.sgd.mu}, rho={cfg.sgd.rho}) have no valid mapping "
                          "(need mu <= 1 and rho < 1)", lines.get(("sgd",)) or lines.get(("scenario",)), source)
    seq_modes = ("rnn_unfold", "rnn_hl_bptt", "rnn_truncated")
    if cfg.mode in seq_modes and cfg.dataset.name not in ("token_sequences", "sequences_jsonl"):
        raise ConfigError(f"mode '{cfg.mode}' needs a sequence dataset", lines.get(("dataset", "name")), source)
    if cfg.mode not in seq_modes and cfg.dataset.name in ("token_sequences", "sequences_jsonl"):
        raise ConfigError(f"mode '{cfg.mode}' needs a sample dataset", lines.get(("dataset", "name")), source)
    if cfg.mode in ("rnn_hl_bptt", "rnn_truncated") and (cfg.sgd.mu != 0 or cfg.sgd.rho != 0):
        raise ConfigError(f"mode '{cfg.mode}' is compared against plain SGD; use mu = rho = 0",
                          lines.get(("scenario",)), source)
    if cfg.mode in seq_modes and cfg.model.kind != "rnn":
        raise ConfigError(f"mode '{cfg.mode}' needs model kind 'rnn'", lines.get(("model", "kind")), source)
    if cfg.mode not in seq_modes and cfg.model.kind == "rnn":
        raise ConfigError("model kind 'rnn' needs a sequence mode", lines.get(("model", "kind")), source)


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"YAML syntax error: {problem}", mark.line + 1 if mark else None, source) from None
    if data is None:
        raise ConfigError("empty configuration", 1, source)
    return from_dict(data, _Lines(text), source)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    cfg = parse_config(text, str(path))
    if cfg.dataset.path and not Path(cfg.dataset.path).is_absolute():
        cfg = replace(cfg, dataset=replace(cfg.dataset, path=str(path.parent / cfg.dataset.path)))
    return cfg
