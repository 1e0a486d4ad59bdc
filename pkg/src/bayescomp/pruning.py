"""Group scoring, threshold masks and cascaded architecture extraction.

Scores grow with how prunable a group is:

* normal-Jeffreys layers use the log dropout rate ``log sigma2_z - log mu_z**2``;
* horseshoe layers use the negative log-mode ``sigma2_z - mu_z`` of the
  composed log-normal scale ``z = s * ztilde``.

A group is kept iff its score is strictly below the threshold.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

NJ_KIND = "nj_log_alpha"
HS_KIND = "hs_neg_log_mode"
DEFAULT_THRESHOLDS = {NJ_KIND: 3.0, HS_KIND: 0.0}


@dataclass
class GroupScores:
    kind: str
    values: list


def nj_scores(layer):
    mu = layer.mu_z.data
    with np.errstate(divide="ignore"):
        return layer.log_sigma2_z.data - np.log(mu * mu)


def hs_scores(layer):
    mu_z, s2_z = layer.local_scale_params()
    return s2_z - mu_z


def model_scores(model):
    if model.prior == "gnj":
        return GroupScores(NJ_KIND, [nj_scores(l) for l in model.layers])
    return GroupScores(HS_KIND, [hs_scores(l) for l in model.layers])


def default_threshold(kind):
    return DEFAULT_THRESHOLDS[kind]


def build_masks(scores, thresholds):
    """Binary keep-masks; ``thresholds`` is one float or one per layer."""
    values = scores.values if isinstance(scores, GroupScores) else scores
    if np.isscalar(thresholds):
        thresholds = [thresholds] * len(values)
    if len(thresholds) != len(values):
        raise DimensionError(f"{len(thresholds)} thresholds for {len(values)} layers")
    return [np.asarray(s) < t for s, t in zip(values, thresholds)]


@dataclass
class PruneReport:
    masks: list  # group masks as supplied
    in_alive: list  # per layer: kept input units (dense) / input channels (conv)
    out_alive: list  # per layer: kept output units / filters
    retained_groups: list
    original_groups: list
    retained_weights: list
    original_weights: list
    retained_biases: list
    original_biases: list
    layer_types: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)

    @property
    def architecture(self):
        return "-".join(str(n) for n in self.retained_groups)

    @property
    def original_architecture(self):
        return "-".join(str(n) for n in self.original_groups)

    def to_dict(self):
        return {
            "architecture": self.architecture,
            "original_architecture": self.original_architecture,
            "retained_groups": self.retained_groups,
            "original_groups": self.original_groups,
            "retained_weights": self.retained_weights,
            "original_weights": self.original_weights,
            "retained_biases": self.retained_biases,
            "original_biases": self.original_biases,
            "layer_types": self.layer_types,
            "thresholds": [None if t is None else float(t) for t in self.thresholds],
        }


def _kernel_area(spec):
    return spec["kh"] * spec["kw"] if spec["type"] == "conv" else 1


def cascade(model, masks, thresholds=()):
    """Propagate group masks through neighbouring layers and count survivors.

    Dense groups are input units: dropping input ``i`` of layer ``l`` also
    drops output ``i`` (and its bias) of layer ``l-1``. Conv groups are
    filters: a dropped filter removes the matching input channel of the next
    conv layer, or every flattened position of that channel in a following
    dense layer. A filter whose flattened positions are all pruned downstream
    is dropped too.
    """
    specs = model.arch["layers"]
    n = len(specs)
    if len(masks) != n:
        raise DimensionError(f"{len(masks)} masks for {n} layers")
    masks = [np.asarray(m, dtype=bool) for m in masks]
    for m, layer in zip(masks, model.layers):
        if m.shape != (layer.n_groups,):
            raise DimensionError(f"mask of shape {m.shape} for a layer with {layer.n_groups} groups")

    in_alive = [None] * n
    out_alive = [None] * n
    for l, spec in enumerate(specs):
        if spec["type"] == "dense":
            alive = masks[l].copy()
            if l > 0 and specs[l - 1]["type"] == "conv":
                channels = specs[l - 1]["out"]
                alive &= np.tile(masks[l - 1], spec["in"] // channels)
            in_alive[l] = alive
        else:
            in_alive[l] = np.ones(spec["in"], dtype=bool) if l == 0 else None

    for l, spec in enumerate(specs):
        if spec["type"] == "conv":
            alive = masks[l].copy()
            if l + 1 < n and specs[l + 1]["type"] == "dense":
                per_pos = in_alive[l + 1].reshape(-1, spec["out"])
                alive &= per_pos.any(axis=0)
            out_alive[l] = alive
            if l + 1 < n and specs[l + 1]["type"] == "conv":
                in_alive[l + 1] = alive
        else:
            out_alive[l] = in_alive[l + 1].copy() if l + 1 < n else np.ones(spec["out"], dtype=bool)

    retained_groups, original_groups = [], []
    retained_w, original_w, retained_b, original_b = [], [], [], []
    for l, spec in enumerate(specs):
        area = _kernel_area(spec)
        group_alive = in_alive[l] if spec["type"] == "dense" else out_alive[l]
        retained_groups.append(int(group_alive.sum()))
        original_groups.append(int(group_alive.size))
        retained_w.append(int(area * in_alive[l].sum() * out_alive[l].sum()))
        original_w.append(int(area * spec["in"] * spec["out"]))
        retained_b.append(int(out_alive[l].sum()))
        original_b.append(int(spec["out"]))
    return PruneReport(
        masks, in_alive, out_alive, retained_groups, original_groups,
        retained_w, original_w, retained_b, original_b,
        [spec["type"] for spec in specs], list(thresholds),
    )


def prune(model, thresholds=None):
    """Score, mask and cascade with the given (or default) thresholds."""
    scores = model_scores(model)
    if thresholds is None:
        thresholds = default_threshold(scores.kind)
    if np.isscalar(thresholds):
        thresholds = [thresholds] * len(model.layers)
    return cascade(model, build_masks(scores, thresholds), thresholds)


# compaction ---------------------------------------------------------


def masked_mean_weights(layer, mask):
    """Masked posterior-mean weights with group scales folded in."""
    scale = np.asarray(mask, dtype=np.float64) * layer.scale_mean()
    if layer.kind == "dense":
        return scale[:, None] * layer.mu_w.data
    return layer.mu_w.data * scale


def compact(model, report):
    """Physically remove pruned rows/columns/filters; returns a ``CompactNet``."""
    specs = model.arch["layers"]
    layers = []
    for l, (layer, spec) in enumerate(zip(model.layers, specs)):
        w = masked_mean_weights(layer, report.masks[l])
        b = layer.bias_mu.data[report.out_alive[l]]
        if spec["type"] == "dense":
            index = None
            if l == 0:
                index = np.flatnonzero(report.in_alive[0])
            elif specs[l - 1]["type"] == "conv":
                prev_alive = report.out_alive[l - 1]
                full_pos = np.flatnonzero(np.tile(prev_alive, spec["in"] // prev_alive.size))
                # positions of alive inputs inside the compact flattened activations
                compact_of_full = np.full(spec["in"], -1)
                compact_of_full[full_pos] = np.arange(full_pos.size)
                index = compact_of_full[np.flatnonzero(report.in_alive[l])]
            w = w[report.in_alive[l]][:, report.out_alive[l]]
            layers.append({"type": "dense", "w": w, "b": b, "index": index})
        else:
            w = w[:, :, report.in_alive[l]][..., report.out_alive[l]]
            layers.append({"type": "conv", "w": w, "b": b, "padding": spec.get("padding", "valid"),
                           "pool": spec.get("pool")})
    return CompactNet(model.arch, layers)


class CompactNet:
    """Deterministic network holding only the retained parameters."""

    def __init__(self, arch, layers):
        self.arch = arch
        self.layers = layers

    def weight_count(self):
        return sum(int(l["w"].size) for l in self.layers)

    def predict(self, x):
        from . import tensor as T

        h = np.asarray(x, dtype=np.float64)
        if self.layers[0]["type"] == "dense":
            h = h.reshape(h.shape[0], -1)
        else:
            h = h.reshape((h.shape[0],) + tuple(self.arch["input_shape"]))
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if layer["type"] == "dense":
                h = h.reshape(h.shape[0], -1)
                if layer["index"] is not None:
                    h = h[:, layer["index"]]
                h = h @ layer["w"] + layer["b"]
            else:
                h = T.conv2d(h, layer["w"], layer["padding"]) + layer["b"]
            if i < last:
                h = np.maximum(h, 0.0)
                if layer.get("pool"):
                    h = T.mean_pool2d(h, layer["pool"]).data
        return h


# histogram export ---------------------------------------------------


def score_histogram_rows(scores, bins=100):
    """Rows ``(layer, bin_left, bin_right, count)`` over uniform bins per layer."""
    values = scores.values if isinstance(scores, GroupScores) else scores
    rows = []
    for l, s in enumerate(values):
        s = np.asarray(s, dtype=np.float64)
        s = s[np.isfinite(s)]
        if s.size == 0:
            continue
        lo, hi = float(s.min()), float(s.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(s, bins=bins, range=(lo, hi))
        rows.extend((l, float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins))
    return rows


def suggest_threshold(values, bins=100):
    """Midpoint of the widest run of empty bins between occupied ones, or None."""
    s = np.asarray(values, dtype=np.float64)
    s = s[np.isfinite(s)]
    if s.size < 2 or s.min() == s.max():
        return None
    counts, edges = np.histogram(s, bins=bins)
    occupied = np.flatnonzero(counts)
    gaps = np.diff(occupied) - 1
    if gaps.size == 0 or gaps.max() <= 0:
        return None
    k = int(np.argmax(gaps))
    left, right = edges[occupied[k] + 1], edges[occupied[k + 1]]
    return float(0.5 * (left + right))


def score_histogram_export(scores, bins=100):
    """(rows, per-layer suggested thresholds)."""
    values = scores.values if isinstance(scores, GroupScores) else scores
    return score_histogram_rows(values, bins), [suggest_threshold(v, bins) for v in values]


def write_histogram_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("layer,bin_left,bin_right,count\n")
        for layer, left, right, count in rows:
            fh.write(f"{layer},{left!r},{right!r},{count}\n")
