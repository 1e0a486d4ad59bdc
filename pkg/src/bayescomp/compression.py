"""Storage accounting for pruned, bit-reduced and clustered networks.

Three storage layouts are compared against the dense 32-bit original:

* ``pruning``: retained rows/columns/filters kept as compact dense 32-bit
  matrices (group sparsity needs no index structure);
* ``fast``: the same layout with each layer's weights at its assigned bit
  width, biases still at 32 bits;
* ``max``: per-layer 1-D k-means on the retained weights, storing
  ``ceil(log2 k)``-bit indices plus a 32-bit codebook.

Layer shapes are charged 32 bits per dimension in every layout, including
the original, so an unpruned model compresses at exactly 1.0.
"""

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse

from .errors import ContractError, DomainError

FLOAT_BITS = 32
DIM_BITS = 32


class KMeansWarning(UserWarning):
    pass


# CSC --------------------------------------------------------------------


@dataclass
class CSCMatrix:
    values: np.ndarray
    row_indices: np.ndarray
    col_pointers: np.ndarray
    shape: tuple
    index_bits: int = 16
    value_bits: int = 32

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def bits(self):
        cols = self.shape[1]
        return self.nnz * (self.value_bits + self.index_bits) + (cols + 1) * self.index_bits

    def to_dense(self):
        return sparse.csc_matrix((self.values, self.row_indices, self.col_pointers), shape=self.shape).toarray()


def csc_encode(matrix, index_bits=16, value_bits=32):
    """CSC layout of a 2-D array and its storage cost in bits (``.bits``)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError("csc_encode expects a 2-D matrix")
    if m.shape[0] > 2 ** index_bits:
        raise DomainError(f"{index_bits}-bit indices cannot address a matrix of shape {m.shape}")
    c = sparse.csc_matrix(m)
    c.sort_indices()
    return CSCMatrix(c.data.copy(), c.indices.astype(np.int64), c.indptr.astype(np.int64), m.shape,
                     index_bits, value_bits)


# k-means ----------------------------------------------------------------


@dataclass
class Codebook:
    centroids: np.ndarray  # ascending

    def __post_init__(self):
        if self.centroids.size < 1:
            raise ContractError("codebook needs at least one centroid")

    @property
    def k(self):
        return int(self.centroids.size)

    @property
    def index_bits(self):
        return int(math.ceil(math.log2(self.k))) if self.k > 1 else 0

    def decode(self, assignments):
        return self.centroids[assignments]


@dataclass
class KMeansResult:
    codebook: Codebook
    assignments: np.ndarray
    objective: list = field(default_factory=list)
    converged: bool = True


def _assign(x, centroids):
    mid = 0.5 * (centroids[1:] + centroids[:-1])
    return np.searchsorted(mid, x)


def _plus_plus(x, k, rng):
    centers = [x[rng.integers(x.size)]]
    d2 = (x - centers[0]) ** 2
    for _ in range(1, k):
        total = d2.sum()
        if total == 0:
            break
        c = x[rng.choice(x.size, p=d2 / total)]
        centers.append(c)
        np.minimum(d2, (x - c) ** 2, out=d2)
    return np.unique(np.array(centers))


def kmeans_1d(values, k, max_iters=100, seed=0):
    """Lloyd iterations from k-means++ seeds; exact when there are <= k distinct values."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ContractError("k-means on an empty set of values")
    if k < 1:
        raise ContractError("k must be at least 1")
    distinct = np.unique(x)
    if distinct.size <= k:
        return KMeansResult(Codebook(distinct), np.searchsorted(distinct, x), [0.0], True)

    rng = np.random.default_rng(seed)
    c = _plus_plus(x, k, rng)
    assign = _assign(x, c)
    history = [float(np.sum((x - c[assign]) ** 2))]
    converged = False
    for _ in range(max_iters):
        counts = np.bincount(assign, minlength=c.size)
        sums = np.bincount(assign, weights=x, minlength=c.size)
        new_c = np.where(counts > 0, sums / np.maximum(counts, 1), c)
        new_c.sort()
        new_assign = _assign(x, new_c)
        obj = float(np.sum((x - new_c[new_assign]) ** 2))
        assert obj <= history[-1] * (1 + 1e-12) + 1e-300, "k-means objective increased"
        history.append(obj)
        done = np.array_equal(new_assign, assign)
        c, assign = new_c, new_assign
        if done:
            converged = True
            break
    if not converged:
        warnings.warn(f"k-means did not converge in {max_iters} iterations", KMeansWarning, stacklevel=2)
    return KMeansResult(Codebook(c), assign, history, converged)


# scenario accounting ----------------------------------------------------


def metadata_bits(report):
    return DIM_BITS * sum(2 if t == "dense" else 4 for t in report.layer_types)


def original_bits(report):
    params = sum(report.original_weights) + sum(report.original_biases)
    return FLOAT_BITS * params + metadata_bits(report)


def _rate(report, bits):
    return original_bits(report) / bits if bits > 0 else math.inf


def scenario_pruning(report):
    """(bits, rate) for compact dense storage at 32 bits."""
    bits = FLOAT_BITS * (sum(report.retained_weights) + sum(report.retained_biases)) + metadata_bits(report)
    return bits, _rate(report, bits)


def scenario_fast_prediction(report, quant_rows):
    """(bits, rate) with each layer's weights at its assigned total bit width."""
    widths = [row.total_bits for row in quant_rows]
    if len(widths) != len(report.retained_weights):
        raise ContractError("one bit width per layer required")
    bits = sum(w * n for w, n in zip(widths, report.retained_weights))
    bits += FLOAT_BITS * sum(report.retained_biases) + metadata_bits(report)
    return bits, _rate(report, bits)


def scenario_max_compression(report, weights, k=32, seed=0):
    """(bits, rate, per-layer k-means results) for codebook + index storage.

    ``weights`` holds the retained weight values per layer (any shape).
    """
    bits = FLOAT_BITS * sum(report.retained_biases) + metadata_bits(report)
    results = []
    for w in weights:
        w = np.asarray(w).ravel()
        if w.size == 0:
            results.append(None)
            continue
        res = kmeans_1d(w, min(k, np.unique(w).size), seed=seed)
        bits += res.codebook.index_bits * w.size + FLOAT_BITS * res.codebook.k
        results.append(res)
    return bits, _rate(report, bits), results


@dataclass
class CompressionReport:
    sparsity_pct: float
    rate_pruning: float
    rate_fast: float
    rate_max: float
    error_pct: float
    original_bits: int
    bits_pruning: int
    bits_fast: int
    bits_max: int
    architecture: str
    bit_widths: list
    codebook_sizes: list

    def to_dict(self):
        return asdict(self)


def compression_report(model, report, quant_rows, test_set, k=32, seed=0):
    """All three storage layouts plus sparsity and masked deterministic test error."""
    from .pruning import compact

    net = compact(model, report)
    b1, r1 = scenario_pruning(report)
    b2, r2 = scenario_fast_prediction(report, quant_rows)
    b3, r3, km = scenario_max_compression(report, [l["w"] for l in net.layers], k=k, seed=seed)
    masks = [m.astype(np.float64) for m in report.masks]
    err = model.error_rate(test_set.inputs, test_set.labels, masks)
    return CompressionReport(
        sparsity_pct=100.0 * sum(report.retained_weights) / sum(report.original_weights),
        rate_pruning=r1,
        rate_fast=r2,
        rate_max=r3,
        error_pct=100.0 * err,
        original_bits=original_bits(report),
        bits_pruning=b1,
        bits_fast=b2,
        bits_max=b3,
        architecture=report.architecture,
        bit_widths=[row.total_bits for row in quant_rows],
        codebook_sizes=[0 if r is None else r.codebook.k for r in km],
    )
