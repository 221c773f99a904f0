"""Per-step run logs shared by the learners and the reference optimizers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


def theta_hash(theta: np.ndarray) -> str:
    """Short digest of the exact bytes of a parameter vector."""
    return hashlib.sha1(np.ascontiguousarray(theta, dtype=np.float64).tobytes()).hexdigest()[:16]


@dataclass
class RunRecord:
    """One row per executed update, plus the parameters after each update.

    ``thetas[k]`` is the concatenated ``[theta_h, theta_y]`` after row ``k``;
    ``theta0`` holds the initial parameters.
    """

    theta0: np.ndarray
    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    def append(self, step: int, time: float, loss, acc, theta, y=None):
        self.steps.append(int(step))
        self.times.append(float(time))
        self.losses.append(None if loss is None else float(loss))
        self.accuracies.append(None if acc is None else float(acc))
        self.thetas.append(np.array(theta, dtype=np.float64))
        self.outputs.append(None if y is None else np.array(y, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1] if self.thetas else self.theta0

    def theta_matrix(self) -> np.ndarray:
        if not self.thetas:
            return np.zeros((0, self.theta0.shape[0]))
        return np.stack(self.thetas)

    def rows(self, other: "RunRecord | None" = None) -> list:
        """Rows ``step,time,loss,accuracy,max_abs_dtheta,mean_abs_dtheta``.

        The weight differences are taken against ``other`` row by row; they
        are empty when no reference is given.
        """
        if other is not None and len(other) != len(self):
            raise ValueError(f"record lengths differ: {len(self)} vs {len(other)}")
        out = []
        for k in range(len(self)):
            row = {
                "step": self.steps[k],
                "time": self.times[k],
                "loss": self.losses[k],
                "accuracy": self.accuracies[k],
                "max_abs_dtheta": None,
                "mean_abs_dtheta": None,
            }
            if other is not None:
                d = np.abs(self.thetas[k] - other.thetas[k])
                row["max_abs_dtheta"] = float(d.max()) if d.size else 0.0
                row["mean_abs_dtheta"] = float(d.mean()) if d.size else 0.0
            out.append(row)
        return out


def weight_diff_summary(a: RunRecord, b: RunRecord) -> dict:
    """Mean/min/max absolute difference of the final weights, plus the worst step."""
    if len(a) != len(b):
        raise ValueError(f"record lengths differ: {len(a)} vs {len(b)}")
    final = np.abs(a.final_theta - b.final_theta)
    if len(a):
        traj = np.abs(a.theta_matrix() - b.theta_matrix())
        worst = float(traj.max()) if traj.size else 0.0
        mean_traj = float(traj.mean()) if traj.size else 0.0
    else:
        worst = mean_traj = 0.0
    la = [x for x in a.losses if x is not None]
    lb = [x for x in b.losses if x is not None]
    loss_gap = float(np.max(np.abs(np.subtract(la, lb)))) if la and len(la) == len(lb) else 0.0
    return {
        "steps": len(a),
        "final_mean_abs_dtheta": float(final.mean()) if final.size else 0.0,
        "final_min_abs_dtheta": float(final.min()) if final.size else 0.0,
        "final_max_abs_dtheta": float(final.max()) if final.size else 0.0,
        "trajectory_max_abs_dtheta": worst,
        "trajectory_mean_abs_dtheta": mean_traj,
        "max_loss_gap": loss_gap,
    }
