"""Cross-model parameter variance and corruption accuracy tables."""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

ABBREVIATIONS = {
    "gaussian_noise": "gaus", "shot_noise": "shot", "impulse_noise": "impul",
    "defocus_blur": "defcs", "glass_blur": "gls", "motion_blur": "mtn", "zoom_blur": "zm",
    "snow": "snw", "frost": "frst", "fog": "fg", "brightness": "brt", "contrast": "cnt",
    "elastic_transform": "els", "pixelate": "px", "jpeg_compression": "jpg", "blur": "blur",
}


def abbreviate(name):
    base = name.split("-")[0]
    return ABBREVIATIONS.get(base, base[:5])


@dataclass
class LayerVariance:
    layer: int
    n_params: int
    mean_variance: float
    max_variance: float


@dataclass
class VarianceProfile:
    layers: list
    n_models: int
    group: object = None

    def half_means(self):
        """Pooled mean per-parameter variance of the input-side and output-side halves."""
        half = len(self.layers) // 2
        first, second = self.layers[:half], self.layers[half:]

        def pooled(rows):
            n = sum(r.n_params for r in rows)
            return sum(r.mean_variance * r.n_params for r in rows) / n

        return pooled(first), pooled(second)

    def to_dict(self):
        return {"n_models": self.n_models, "group": self.group,
                "layers": [vars(r).copy() for r in self.layers]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self):
        head = f"# layer variance across {self.n_models} models"
        if self.group is not None:
            head += f" (group {self.group})"
        lines = [head, f"{'layer':>5} {'params':>8} {'mean_var':>14} {'max_var':>14}"]
        for r in self.layers:
            lines.append(f"{r.layer:>5} {r.n_params:>8} {r.mean_variance:>14.6e} {r.max_variance:>14.6e}")
        return "\n".join(lines) + "\n"


def _param_list(model):
    params = getattr(model, "params", model)
    return [np.asarray(p, dtype=np.float64) for p in params]


def layer_variance(models, group=None):
    """Population variance of every parameter across ``models``, summarized per layer.

    Each model is a flat ``[W1, b1, W2, b2, ...]`` list (or anything with a
    ``.params`` attribute).  Layer ``i`` pools ``W_i`` and ``b_i``; layers are
    numbered from the input side starting at 1.
    """
    models = [_param_list(m) for m in models]
    if len(models) < 2:
        raise UsageError("variance needs at least two models")
    ref = models[0]
    if len(ref) % 2:
        raise UsageError("parameter lists must alternate weights and biases")
    for m in models[1:]:
        if len(m) != len(ref) or any(a.shape != b.shape for a, b in zip(m, ref)):
            raise UsageError("models are not shape-congruent")
    rows = []
    for layer in range(len(ref) // 2):
        stacked = np.stack([np.concatenate([m[2 * layer].ravel(), m[2 * layer + 1].ravel()])
                            for m in models])
        # shifting by one model leaves the variance unchanged and makes identical models exact zeros
        var = (stacked - stacked[0]).var(axis=0)
        rows.append(LayerVariance(layer + 1, int(var.size), float(var.mean()), float(var.max())))
    return VarianceProfile(rows, len(models), group)


def grouped_layer_variance(models, keys):
    """One profile per distinct key (e.g. the number of adaptation samples)."""
    if len(models) != len(keys):
        raise UsageError("need exactly one grouping key per model")
    out = {}
    for key in sorted(set(keys)):
        out[key] = layer_variance([m for m, k in zip(models, keys) if k == key], key)
    return out


@dataclass
class CorruptionTable:
    methods: list
    corruptions: list
    cells: np.ndarray
    title: str = "Top-1 accuracy (%)"
    best: dict = field(default_factory=dict)

    @property
    def means(self):
        return self.cells.mean(axis=1)

    def row(self, method):
        return dict(zip(self.corruptions, self.cells[self.methods.index(method)]))

    def to_dict(self):
        return {
            "title": self.title,
            "columns": list(self.corruptions) + ["mean"],
            "rows": [{"method": m,
                      "cells": {c: round(float(v), 4) for c, v in zip(self.corruptions, self.cells[i])},
                      "mean": round(float(self.means[i]), 4)}
                     for i, m in enumerate(self.methods)],
            "best": self.best,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self):
        """Fixed-width rendering; the best cell of each column carries a ``*``."""
        cols = [abbreviate(c) for c in self.corruptions] + ["mean"]
        name_w = max(len(m) for m in self.methods + ["method"])
        cell_w = max(7, max(len(c) for c in cols) + 1)
        lines = [f"# {self.title}",
                 f"{'method':<{name_w}}" + "".join(f"{c:>{cell_w}}" for c in cols)]
        means = self.means
        for i, m in enumerate(self.methods):
            cells = []
            for j, c in enumerate(list(self.corruptions) + ["mean"]):
                v = means[i] if c == "mean" else self.cells[i, j]
                mark = "*" if m in self.best.get(c, ()) else " "
                cells.append(f"{v:>{cell_w - 1}.1f}{mark}")
            lines.append(f"{m:<{name_w}}" + "".join(cells))
        return "\n".join(lines) + "\n"


def corruption_table(results, corruptions=None, title="Top-1 accuracy (%)"):
    """Build a method x corruption table from ``{method: {corruption: percent}}``."""
    if not results:
        raise UsageError("no results to tabulate")
    methods = list(results)
    if corruptions is None:
        corruptions = list(results[methods[0]])
    corruptions = list(corruptions)
    if not corruptions:
        raise UsageError("no corruption columns")
    cells = np.empty((len(methods), len(corruptions)))
    for i, m in enumerate(methods):
        row = results[m]
        for j, c in enumerate(corruptions):
            if c not in row:
                raise UsageError(f"missing cell: method {m!r} has no entry for {c!r}")
            cells[i, j] = float(row[c])
        extra = set(row) - set(corruptions)
        if extra:
            raise UsageError(f"method {m!r} has cells for unknown columns {sorted(extra)}")
    table = CorruptionTable(methods, corruptions, cells, title)
    means = table.means
    for j, c in enumerate(corruptions + ["mean"]):
        col = means if c == "mean" else cells[:, j]
        top = col.max()
        table.best[c] = [m for m, v in zip(methods, col) if v == top]
    return table
