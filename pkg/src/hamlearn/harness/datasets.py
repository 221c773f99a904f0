"""Small deterministic datasets generated in-process."""

from __future__ import annotations

import numpy as np

# per-class feature means / standard deviations of the classic flower table
_FLOWER_MEANS = np.array([
    [5.006, 3.428, 1.462, 0.246],
    [5.936, 2.770, 4.260, 1.326],
    [6.588, 2.974, 5.552, 2.026],
])
_FLOWER_STDS = np.array([
    [0.352, 0.379, 0.174, 0.105],
    [0.516, 0.314, 0.470, 0.198],
    [0.636, 0.322, 0.552, 0.275],
])


def iris_like(seed: int = 0, per_class: int = 50, standardize: bool = True) -> list:
    """150 samples, 4 features, 3 balanced classes drawn from Gaussian clusters.

    Labels are class indices stored as 0-d float arrays.
    """
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(3):
        xs.append(rng.normal(_FLOWER_MEANS[c], _FLOWER_STDS[c], size=(per_class, 4)))
        ys.extend([c] * per_class)
    x = np.vstack(xs)
    if standardize:
        x = (x - x.mean(axis=0)) / x.std(axis=0)
    return [(x[i], np.array(float(ys[i]))) for i in range(len(ys))]


def digits_like(seed: int = 0, n: int = 100, side: int = 7, n_classes: int = 10, flip: float = 0.08) -> list:
    """Noisy copies of ``n_classes`` random binary ``side x side`` glyphs."""
    rng = np.random.default_rng(seed)
    protos = (rng.random((n_classes, side * side)) < 0.4).astype(float)
    out = []
    for i in range(n):
        c = i % n_classes
        noise = rng.random(side * side) < flip
        x = np.where(noise, 1.0 - protos[c], protos[c])
        out.append((x, np.array(float(c))))
    order = rng.permutation(n)
    return [out[i] for i in order]


def token_sequences(n_seq: int = 20, length: int = 5, vocab: int = 4, n_classes: int = 2, seed: int = 0,
                    every_token: bool = False) -> list:
    """One-hot token sequences labelled by the sum of token ids mod ``n_classes``.

    Each sequence is a list of ``(u, y_hat)``; by default only the last
    token carries a target (the running label when ``every_token``).
    """
    rng = np.random.default_rng(seed)
    eye = np.eye(vocab)
    seqs = []
    for _ in range(n_seq):
        ids = rng.integers(vocab, size=length)
        seq = []
        for k, tok in enumerate(ids):
            label = np.array(float(int(ids[: k + 1].sum()) % n_classes))
            target = label if (every_token or k == length - 1) else None
            seq.append((eye[tok].copy(), target))
        seqs.append(seq)
    return seqs


DATASETS = {"iris_like": iris_like, "digits_like": digits_like, "token_sequences": token_sequences}
