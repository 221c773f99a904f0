"""Paired runs: the costate learner and its reference optimizer, same init."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import netspec as ns
from ..hl_core import ConstantPhi, HLConfig, LossSpec, WarmStartPhi, accuracy
from ..oracles import SGDConfig, bptt_gradients, ff_loss_and_grad, map_params, sgd_momentum_step
from ..records import RunRecord, theta_hash, weight_diff_summary
from ..recovery import RecoveryMode, flatten_sequence, run_mode, unfolded_spec
from ..stream import from_dataset, load_csv_dataset, load_jsonl_dataset, load_sequences, tokenize_sequences
from . import datasets
from .config import ExperimentConfig

CSV_COLUMNS = ("step", "time", "loss", "accuracy", "max_abs_dtheta", "mean_abs_dtheta")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    hl: RunRecord
    oracle: RunRecord
    summary: dict
    passed: bool


# ---------------------------------------------------------------------------
# building blocks


def load_samples(cfg: ExperimentConfig) -> list:
    ds = cfg.dataset
    opts = dict(ds.options)
    if ds.name == "iris_like":
        return datasets.iris_like(seed=ds.seed, **opts)
    if ds.name == "digits_like":
        return datasets.digits_like(seed=ds.seed, **opts)
    if ds.name == "token_sequences":
        return datasets.token_sequences(seed=ds.seed, **opts)
    if ds.name == "csv":
        return load_csv_dataset(ds.path)
    if ds.name == "jsonl":
        return load_jsonl_dataset(ds.path)
    return load_sequences(ds.path)


def _n_classes(samples) -> int:
    labels = [y for _, y in samples if y is not None]
    first = np.asarray(labels[0])
    if first.size > 1:
        return first.size
    return int(max(float(np.asarray(y)) for y in labels)) + 1


def output_spec(cfg: ExperimentConfig, n_in: int, n_out: int) -> ns.NetSpec:
    if cfg.model.kind == "linear":
        return ns.linear_classifier(n_in, n_out)
    return ns.mlp_output(n_in, cfg.model.hidden, n_out, cfg.model.activation)


def hl_config(cfg: ExperimentConfig) -> HLConfig:
    """Learning constants matching the reference optimizer.

    The feed-forward modes map ``(gamma, mu, rho)`` directly. When the
    reference seeds its momentum buffer with the first gradient, the loss
    scale is ``1/tau`` on the first sample only, so the first costate equals
    that gradient. The replay modes use ``phi = 1/tau`` and no dissipation so
    the replayed costate is the plain BPTT gradient.
    """
    tau = cfg.tau
    if cfg.mode in ("rnn_hl_bptt", "rnn_truncated"):
        return HLConfig(tau=tau, beta=cfg.sgd.gamma / tau, eta=0.0, phi=ConstantPhi(1.0 / tau), ordering="sequential")
    m = map_params(SGDConfig(cfg.sgd.gamma, cfg.sgd.mu, cfg.sgd.rho, cfg.buffer_init), tau)
    phi = ConstantPhi(m.phi_const)
    if cfg.buffer_init == "gradient" and cfg.sgd.rho != 0:
        phi = WarmStartPhi(1.0 / tau, phi, tau / 2)
    return HLConfig(tau=tau, beta=m.beta, eta=m.eta, phi=phi, ordering="sequential")


def _loss(cfg) -> LossSpec:
    return LossSpec(cfg.loss)


# ---------------------------------------------------------------------------
# reference runs


def sgd_run(source, spec: ns.NetSpec, theta0, sgd: SGDConfig, loss: LossSpec) -> RunRecord:
    """Momentum SGD over a sample stream, one sample per step."""
    rec = RunRecord(np.asarray(theta0, dtype=np.float64))
    state = ns.make_state(spec, theta_y=theta0)
    buf = None
    for k, item in enumerate(source):
        lv, g, y = ff_loss_and_grad(spec, state, item.u, item.y_hat, loss)
        th, buf = sgd_momentum_step(state.theta_y, g, buf, sgd)
        state = ns.make_state(spec, theta_y=th)
        rec.append(k, item.timestamp, lv, accuracy(y, item.y_hat), th)
    return rec


def bptt_sgd_run(seqs, spec: ns.NetSpec, theta0, gamma: float, loss: LossSpec, window: int | None,
                 times) -> RunRecord:
    """Plain SGD on (possibly truncated) BPTT gradients, one update per sequence."""
    rec = RunRecord(np.asarray(theta0, dtype=np.float64))
    theta = np.asarray(theta0, dtype=np.float64)
    nh = spec.n_params_h
    for k, seq in enumerate(seqs):
        us = [u for u, _ in seq]
        ys = [y for _, y in seq]
        w = None if window is None else min(window, len(seq))
        g, hs = bptt_gradients(us, ys, np.zeros(spec.state_dim), theta, spec, loss, window=w)
        r = len(seq) if w is None else w
        losses, y_last = [], None
        py = spec.unpack(theta[nh:], "y")
        for c in range(len(seq) - r, len(seq)):
            y = ns.output_map(spec, us[c], hs[c + 1], py)
            y_last = y
            if ys[c] is not None:
                losses.append(float(loss(y, np.asarray(ys[c]))))
        theta = theta - gamma * g
        acc = accuracy(y_last, ys[-1]) if ys[-1] is not None else None
        rec.append(k, times[k], float(np.sum(losses)) if losses else None, acc, theta)
    return rec


# ---------------------------------------------------------------------------
# experiment


def _epoch_sequences(seqs, epochs, shuffle_seed):
    rng = np.random.default_rng(shuffle_seed) if shuffle_seed is not None else None
    out = []
    for _ in range(epochs):
        idx = rng.permutation(len(seqs)) if rng is not None else np.arange(len(seqs))
        out.extend(seqs[i] for i in idx)
    return out


def run_pair(cfg: ExperimentConfig) -> tuple:
    """Run both learners; returns ``(hl_record, oracle_record)``."""
    loss = _loss(cfg)
    hcfg = hl_config(cfg)
    samples = load_samples(cfg)
    sgd = SGDConfig(cfg.sgd.gamma, cfg.sgd.mu, cfg.sgd.rho, cfg.buffer_init)

    if cfg.mode in ("ff_output", "ff_state"):
        n_in = np.asarray(samples[0][0]).size
        spec_o = output_spec(cfg, n_in, _n_classes(samples))
        theta0 = ns.init_state(spec_o, cfg.seed).theta_y
        source = from_dataset(samples, cfg.shuffle_seed, spacing=cfg.tau, epochs=cfg.epochs)
        if cfg.mode == "ff_output":
            spec, state = spec_o, ns.make_state(spec_o, theta_y=theta0)
        else:
            spec = ns.as_state_net(spec_o)
            state = ns.make_state(spec, theta_h=theta0)
        hl = run_mode(RecoveryMode(cfg.mode), source, spec, hcfg, loss, state)
        return hl, sgd_run(source, spec_o, theta0, sgd, loss)

    # sequence tasks
    steps = len(samples[0])
    if any(len(s) != steps for s in samples) and cfg.mode == "rnn_unfold":
        raise ValueError("rnn_unfold needs sequences of equal length")
    n_in = np.asarray(samples[0][0][0]).size
    n_out = _n_classes([tok for s in samples for tok in s])
    spec_r = ns.rnn_state_net(n_in, cfg.model.hidden, cfg.model.activation, readout=n_out)
    th, ty = spec_r.init_params(np.random.default_rng(cfg.seed))
    theta0 = np.concatenate([th, ty])
    seqs = _epoch_sequences(samples, cfg.epochs, cfg.shuffle_seed)
    if not seqs:
        return RunRecord(theta0), RunRecord(theta0)

    if cfg.mode == "rnn_unfold":
        spec_u = unfolded_spec(n_in, cfg.model.hidden, steps, n_out, cfg.model.activation)
        flat = [(flatten_sequence([u for u, _ in s]), s[-1][1]) for s in seqs]
        source = from_dataset(flat, None, spacing=cfg.tau, epochs=1)
        hl = run_mode(RecoveryMode("rnn_unfold"), source, spec_u, hcfg, loss,
                      ns.make_state(spec_u, theta_y=theta0))
        if sgd.mu != 0 or sgd.rho != 0:
            # same model, same stream; momentum handled by the generic reference
            ref = sgd_run(source, spec_u, theta0, sgd, loss)
        else:
            # the unrolled net only sees the target of the last token
            last_only = [[(u, None) for u, _ in s[:-1]] + [s[-1]] for s in seqs]
            times = [it.timestamp for it in source]
            ref = bptt_sgd_run(last_only, spec_r, theta0, sgd.gamma, loss, None, times)
        return hl, ref

    window = cfg.window if cfg.mode == "rnn_truncated" else None
    source = tokenize_sequences(seqs, spacing=cfg.tau)
    state = ns.make_state(spec_r, theta_h=th, theta_y=ty)
    hl = run_mode(RecoveryMode(cfg.mode, window=window), source, spec_r, hcfg, loss, state)
    return hl, bptt_sgd_run(seqs, spec_r, theta0, sgd.gamma, loss, window, hl.times)


def evaluate(summary: dict, cfg: ExperimentConfig) -> bool:
    tol = cfg.tolerance
    ok = True
    if tol.max_abs_dtheta is not None:
        ok &= summary["trajectory_max_abs_dtheta"] <= tol.max_abs_dtheta
    if tol.mean_abs_dtheta is not None:
        ok &= summary["final_mean_abs_dtheta"] <= tol.mean_abs_dtheta
    if tol.loss_gap is not None:
        ok &= summary["max_loss_gap"] <= tol.loss_gap
    return bool(ok)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Run HL and the reference side by side; write logs when ``out_dir`` is set.

    Files: ``hl.csv``, ``oracle.csv`` (columns ``step,time,loss,accuracy,
    max_abs_dtheta,mean_abs_dtheta``) and ``summary.json``.
    """
    hl, ref = run_pair(cfg)
    summary = weight_diff_summary(hl, ref)
    passed = evaluate(summary, cfg)
    summary = {"name": cfg.name, "scenario": cfg.scenario, "mode": cfg.mode, "passed": passed,
               "final_theta_hash_hl": theta_hash(hl.final_theta),
               "final_theta_hash_oracle": theta_hash(ref.final_theta), **summary}
    out = out_dir if out_dir is not None else cfg.output_dir
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "hl.csv", hl.rows(ref))
        write_csv(out / "oracle.csv", ref.rows(hl))
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out / "config.yaml").write_text(cfg.to_yaml())
    return ExperimentResult(cfg, hl, ref, summary, passed)


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str | Path, rows: list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_csv(path: str | Path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(CSV_COLUMNS)}, got {reader.fieldnames}")
        return [{k: (None if v == "" else float(v)) for k, v in row.items()} for row in reader]


@dataclass
class CurveReport:
    rows: int
    max_gap: float
    first_bad_row: int | None
    tol: float

    @property
    def passed(self) -> bool:
        return self.first_bad_row is None


def compare_curves(a: str | Path, b: str | Path, tol: float = 1e-9) -> CurveReport:
    """Row-by-row loss gap between two logs; fails at the first gap above ``tol``."""
    ra, rb = read_csv(a), read_csv(b)
    if len(ra) != len(rb):
        raise ValueError(f"row counts differ: {len(ra)} in {a} vs {len(rb)} in {b}")
    gap, first = 0.0, None
    for i, (x, y) in enumerate(zip(ra, rb)):
        la, lb = x["loss"], y["loss"]
        if la is None and lb is None:
            continue
        d = float("inf") if la is None or lb is None else abs(la - lb)
        gap = max(gap, d)
        if d > tol and first is None:
            first = i
    return CurveReport(len(ra), gap, first, tol)
