"""Timestamped streams of (input, optional target, boundary tag) items."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .tensor_ad import tensor


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class StreamItem:
    u: np.ndarray
    y_hat: np.ndarray | None
    delta: int
    timestamp: float


@dataclass
class StreamSource:
    """A finite, replayable stream.

    ``items`` is materialised; iteration yields them in order. ``kind`` is
    one of ``iid_dataset``, ``token_sequence``, ``reverse_replay`` or
    ``custom``.
    """

    kind: str
    items: list
    spacing: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = [it.timestamp for it in self.items]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise StreamError("timestamps must be strictly increasing")
        if any(t < 0 for t in ts):
            raise StreamError("timestamps must be non-negative")

    def __iter__(self) -> Iterator[StreamItem]:
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i) -> StreamItem:
        return self.items[i]

    def spacings(self) -> list:
        ts = [it.timestamp for it in self.items]
        return [b - a for a, b in zip(ts, ts[1:])]


def _target(y):
    return None if y is None else tensor(y)


def _times(n: int, spacing: float, start: float, timestamps: Sequence[float] | None) -> list:
    if timestamps is not None:
        if len(timestamps) != n:
            raise StreamError(f"{len(timestamps)} timestamps for {n} items")
        return [float(t) for t in timestamps]
    if not spacing > 0:
        raise StreamError(f"spacing must be positive, got {spacing}")
    return [start + i * spacing for i in range(n)]


def from_dataset(samples: Sequence, shuffle_seed: int | None = None, spacing: float = 1.0, epochs: int = 1,
                 start: float = 0.0, timestamps: Sequence[float] | None = None) -> StreamSource:
    """Stream ``(u, y_hat)`` pairs one after the other, ``delta = 1`` everywhere.

    With a seed, every epoch is an independent permutation drawn from one
    generator, so the whole stream is reproducible from the seed.
    """
    if len(samples) == 0:
        raise StreamError("empty dataset")
    if epochs < 0:
        raise StreamError("epochs must be non-negative")
    rng = np.random.default_rng(shuffle_seed) if shuffle_seed is not None else None
    order = []
    for _ in range(epochs):
        idx = np.arange(len(samples))
        if rng is not None:
            idx = rng.permutation(len(samples))
        order.extend(int(i) for i in idx)
    times = _times(len(order), spacing, start, timestamps)
    items = [StreamItem(tensor(samples[i][0]), _target(samples[i][1]), 1, t) for i, t in zip(order, times)]
    return StreamSource("iid_dataset", items, spacing if timestamps is None else None,
                        {"order": order, "n_samples": len(samples)})


def tokenize_sequences(seqs: Sequence[Sequence], spacing: float = 1.0, start: float = 0.0,
                       timestamps: Sequence[float] | None = None) -> StreamSource:
    """Stream sequences token by token; ``delta = 1`` on each last token.

    Each sequence is a list of ``(u, y_hat)`` tokens; ``y_hat`` may be ``None``.
    """
    flat = []
    bounds = []
    for k, seq in enumerate(seqs):
        if len(seq) == 0:
            raise StreamError(f"sequence {k} is empty")
        for j, (u, y) in enumerate(seq):
            flat.append((u, y, int(j == len(seq) - 1)))
        bounds.append(len(seq))
    times = _times(len(flat), spacing, start, timestamps)
    items = [StreamItem(tensor(u), _target(y), d, t) for (u, y, d), t in zip(flat, times)]
    return StreamSource("token_sequence", items, spacing if timestamps is None else None, {"lengths": bounds})


def replay_order(n: int, window: int | None = None) -> list:
    """Token indices for a forward pass followed by a reversed tail.

    ``window=None`` replays all earlier tokens (``0..n-1, n-2..0``); a window
    ``r`` replays only the last ``r - 1`` of them.
    """
    if n < 1:
        raise StreamError("empty sequence")
    r = n if window is None else window
    if not 1 <= r <= n:
        raise StreamError(f"window must be in [1, {n}], got {r}")
    return list(range(n)) + list(range(n - 2, n - 1 - r, -1))


def reverse_replay(seq: Sequence, spacing: float = 1.0, start: float = 0.0, window: int | None = None) -> StreamSource:
    """Tokens ``0..n-1`` then ``n-2..0`` (no repeat of the pivot).

    ``delta = 1`` marks the pivot (the last original token) and the final
    replayed token; all other items carry ``delta = 0``.
    """
    order = replay_order(len(seq), window)
    n = len(seq)
    times = _times(len(order), spacing, start, None)
    items = []
    for p, (k, t) in enumerate(zip(order, times)):
        u, y = seq[k]
        delta = int(p == n - 1 or p == len(order) - 1)
        items.append(StreamItem(tensor(u), _target(y), delta, t))
    return StreamSource("reverse_replay", items, spacing, {"order": order, "n": n, "window": window})


def psi_map(t: float, t_last: float, tau: float) -> float:
    """Time reflection ``2 t_last - 2 tau - t`` used during replay."""
    if not t > t_last:
        raise StreamError(f"psi_map is defined for t > t_last ({t} <= {t_last})")
    return 2.0 * t_last - 2.0 * tau - t


def custom(items: Iterable[tuple], timestamps: Sequence[float]) -> StreamSource:
    """Stream arbitrary ``(u, y_hat, delta)`` triples at the given times."""
    items = list(items)
    times = _times(len(items), 1.0, 0.0, timestamps)
    out = [StreamItem(tensor(u), _target(y), int(d), t) for (u, y, d), t in zip(items, times)]
    return StreamSource("custom", out, None)


def repeat_items(source: StreamSource, nu: int, spacing: float | None = None) -> StreamSource:
    """Present every item ``nu`` times in a row (grouped layer-wise updates).

    Item ``k`` of the output is item ``k // nu`` of the input.
    """
    if nu < 1:
        raise StreamError("nu must be >= 1")
    step = spacing if spacing is not None else (source.spacing or 1.0)
    items = []
    for j, it in enumerate(source):
        for r in range(nu):
            k = j * nu + r
            items.append(StreamItem(it.u, it.y_hat, int(it.delta and r == nu - 1), k * step))
    return StreamSource(source.kind, items, step, dict(source.meta, nu=nu))


def busy_filter(source: StreamSource, duration: Callable[[StreamItem], float]) -> StreamSource:
    """Drop items that arrive while the agent is still processing.

    ``duration(item)`` is the processing time of an accepted item; any item
    whose timestamp falls before the end of that processing is discarded.
    """
    kept = []
    free_at = -np.inf
    for it in source:
        if it.timestamp < free_at:
            continue
        kept.append(it)
        free_at = it.timestamp + float(duration(it))
    return StreamSource(source.kind, kept, None, dict(source.meta, filtered=True))


# ---------------------------------------------------------------------------
# file loaders


def load_csv_dataset(path: str | Path, n_classes: int | None = None) -> list:
    """Rows of numeric features followed by an integer label.

    A header line is skipped when its first field is not numeric.
    """
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [float(c) for c in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise StreamError(f"{path}:{lineno}: non-numeric field") from None
            label = values[-1]
            if label != int(label):
                raise StreamError(f"{path}:{lineno}: label {label} is not an integer")
            rows.append((np.array(values[:-1]), np.array(float(int(label)))))
    if not rows:
        raise StreamError(f"{path}: no data rows")
    return rows


def load_jsonl_dataset(path: str | Path) -> list:
    """JSON-lines of ``{"x": [...], "y": int}`` or ``[f1, ..., fk, label]``."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StreamError(f"{path}:{lineno}: {exc.msg}") from None
            if isinstance(rec, dict):
                rows.append((np.array(rec["x"], dtype=float), np.array(float(rec["y"]))))
            else:
                rows.append((np.array(rec[:-1], dtype=float), np.array(float(rec[-1]))))
    if not rows:
        raise StreamError(f"{path}: no data rows")
    return rows


def load_sequences(path: str | Path) -> list:
    """JSON-lines of sequences.

    Each line is ``{"tokens": [[...], ...], "targets": [... or null]}`` or a
    bare list of token arrays (no targets).
    """
    seqs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StreamError(f"{path}:{lineno}: {exc.msg}") from None
            if isinstance(rec, dict):
                tokens = rec["tokens"]
                targets = rec.get("targets") or [None] * len(tokens)
            else:
                tokens, targets = rec, [None] * len(rec)
            if len(targets) != len(tokens):
                raise StreamError(f"{path}:{lineno}: {len(targets)} targets for {len(tokens)} tokens")
            seqs.append([(np.array(u, dtype=float), None if y is None else np.array(y, dtype=float))
                         for u, y in zip(tokens, targets)])
    return seqs
