"""Diagnostics: Monte Carlo predictive sampling, uncertainty decomposition,
2-simplex export for visualization, and per-dimension latent activity."""

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import variational
from .exceptions import ConfigurationError, InvalidInputError
from .numerics import entropy


@dataclass
class MCPredictions:
    """N forward passes on one instance, one probability row per pass."""

    instance_id: str
    rows: np.ndarray  # (N, K)
    seed: int

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise InvalidInputError("rows must be a non-empty (N, K) array")


def mc_predict(model, provider, inst, n, rng):
    """Draw n posterior samples and score each into a probability row."""
    if n < 1:
        raise InvalidInputError("sample count must be >= 1")
    rows = []
    with torch.no_grad():
        e_h, e_t = provider.pair_tensors(inst.instance_id)
        h, t = model.scoring_pair(e_h, e_t)
        g = model.posterior_for(e_h, e_t)
        for _ in range(int(n)):
            z = variational.sample_latent(g, rng)
            rows.append(torch.exp(model.log_probs(h, t, z)).numpy())
    return MCPredictions(inst.instance_id, np.array(rows), rng.seed)


def uncertainty(preds):
    """(total, model) uncertainty in nats.

    Total is the entropy of the mean row; model uncertainty is the mutual
    information total - mean(per-row entropy), nonnegative by Jensen.
    """
    if preds.rows.shape[0] < 2:
        raise InvalidInputError("uncertainty decomposition needs N >= 2 passes")
    mean_row = preds.rows.mean(axis=0)
    mean_row = mean_row / mean_row.sum()
    total = entropy(mean_row)
    expected = float(np.mean([entropy(r / r.sum()) for r in preds.rows]))
    return total, total - expected


# 2-simplex corners for barycentric plotting (equilateral triangle).
_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])


def simplex_export(preds, relset, drop_class):
    """Renormalize each row over the three kept classes and convert to 2-d
    plot coordinates. Returns (kept class names, rows) where each row is
    (pass index, x, y, argmax-class)."""
    drop = relset.index(drop_class)
    kept = [i for i in range(len(relset)) if i != drop]
    if len(kept) != 3:
        raise ConfigurationError(
            f"simplex export needs exactly 3 kept classes, got {len(kept)}"
        )
    names = [relset.names[i] for i in kept]
    out = []
    for k, row in enumerate(preds.rows):
        masses = row[kept]
        total = masses.sum()
        if total <= 0:
            raise InvalidInputError("all probability mass on the dropped class")
        bary = masses / total
        xy = bary @ _CORNERS
        out.append((k, float(xy[0]), float(xy[1]), names[int(np.argmax(bary))]))
    return names, out


def write_simplex_csv(path, instance_rows):
    """instance_rows: iterable of (instance_id, rows from simplex_export)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,pass,x,y,argmax\n")
        for inst_id, rows in instance_rows:
            for k, x, y, arg in rows:
                fh.write(f"{inst_id},{k},{x:.6f},{y:.6f},{arg}\n")


def write_simplex_svg(path, instance_rows, size=400):
    """Minimal static scatter of simplex points inside the triangle."""
    pad = 20
    scale = size - 2 * pad

    def to_px(x, y):
        return pad + x * scale, size - pad - y * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        '<polygon points="{},{} {},{} {},{}" fill="none" stroke="black"/>'.format(
            *to_px(*_CORNERS[0]), *to_px(*_CORNERS[1]), *to_px(*_CORNERS[2])
        ),
    ]
    for _, rows in instance_rows:
        for _, x, y, _ in rows:
            px, py = to_px(x, y)
            parts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="2" fill="steelblue" fill-opacity="0.5"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


@dataclass
class ActivityReport:
    """Per-dimension variance of the posterior-mean parameters across inputs."""

    activities: np.ndarray

    def __post_init__(self):
        self.activities = np.asarray(self.activities, dtype=np.float64)
        if np.any(self.activities < -1e-12):
            raise InvalidInputError("activities must be nonnegative")
        self.activities = np.maximum(self.activities, 0.0)

    @property
    def minimum(self):
        return float(self.activities.min())

    @property
    def median(self):
        return float(np.median(self.activities))

    @property
    def maximum(self):
        return float(self.activities.max())

    @property
    def mean(self):
        return float(self.activities.mean())


def activity_scores(model, provider, split):
    """Activity of parameter dimension j = variance across instances of the
    posterior-mean transformed parameter vector's j-th entry."""
    if len(split) < 2:
        raise InvalidInputError("activity needs at least 2 instances")
    flats = []
    with torch.no_grad():
        for inst in split:
            e_h, e_t = provider.pair_tensors(inst.instance_id)
            g = model.posterior_for(e_h, e_t)
            flats.append(model.params_at(g.mu).flat.numpy())
    stacked = np.array(flats)
    return ActivityReport(stacked.var(axis=0))


def uncertainty_table(model, provider, split, n, rng):
    """Rows (id, total, model, predicted, gold) for a whole split."""
    rows = []
    for inst in split:
        preds = mc_predict(model, provider, inst, n, rng)
        total, model_u = uncertainty(preds)
        mean_row = preds.rows.mean(axis=0)
        predicted = model.relset.names[int(np.argmax(mean_row))]
        rows.append((inst.instance_id, total, model_u, predicted, inst.gold_label))
    return rows


def write_uncertainty_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,total,model,predicted,gold\n")
        for inst_id, total, model_u, predicted, gold in rows:
            fh.write(f"{inst_id},{total:.6f},{model_u:.6f},{predicted},{gold}\n")


def write_activity_csv(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("dim,activity\n")
        for j, a in enumerate(report.activities):
            fh.write(f"{j},{a:.10g}\n")
