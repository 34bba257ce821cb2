"""Kernel two-sample statistics between source and target feature batches.

The alignment loss is a class-conditional maximum mean discrepancy: per
class, samples are weighted by one-hot labels (source) or predicted
probabilities (target), each column normalized to sum to one, and the
squared RKHS distance between the weighted means is averaged over the
classes present in the batch.  A literal triple-loop expansion of the same
quantity (``lmmd_oracle``) is kept as the trusted reference.

Weights are plain numpy (no gradient); gradients flow through the feature
matrices only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Tensor

log = logging.getLogger(__name__)


@dataclass
class KernelSpec:
    """Family of Gaussian kernels around a base bandwidth (sigma^2).

    ``base_bandwidth`` is a fixed positive sigma^2, or "median" for the
    median of the pooled pairwise squared distances of the current batch.
    Member k of the family uses sigma_k^2 = base * mul_factor**(k - num//2).
    """

    num_kernels: int = 5
    mul_factor: float = 2.0
    base_bandwidth: float | str = "median"

    def validate(self):
        if self.num_kernels < 1:
            raise ValueError("need at least one kernel")
        if self.mul_factor <= 0:
            raise ValueError("mul_factor must be positive")
        if isinstance(self.base_bandwidth, str):
            if self.base_bandwidth != "median":
                raise ValueError(f"unknown bandwidth mode {self.base_bandwidth!r}")
        elif self.base_bandwidth <= 0:
            raise ValueError("fixed bandwidth must be positive")

    def bandwidths(self, base):
        half = self.num_kernels // 2
        return [base * self.mul_factor ** (k - half) for k in range(self.num_kernels)]


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def pairwise_sq_dists(x, y):
    """D[i, j] = ||x_i - y_j||^2 for x (n, d), y (m, d); differentiable.

    The expansion ||x||^2 + ||y||^2 - 2<x, y> can round to slightly negative
    values for near-identical points; those are clamped to zero (the true
    distance), otherwise a small bandwidth would turn them into huge positive
    kernel exponents.
    """
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    xx = E.tsum(E.mul(x, x), axis=1, keepdims=True)           # (n, 1)
    yy = E.reshape(E.tsum(E.mul(y, y), axis=1), (1, y.shape[0]))  # (1, m)
    cross = E.scale(E.matmul(x, E.transpose(y)), -2.0)
    return E.leaky_relu(E.add(E.add(xx, yy), cross), 0.0)


def median_bandwidth(zs, zt):
    """Median of the pooled pairwise squared distances (off-diagonal pairs).

    Falls back to 1.0 when every pairwise distance is zero.  Invariant to
    sample order (a median over the same multiset).
    """
    pooled = np.concatenate([np.asarray(zs, dtype=np.float64),
                             np.asarray(zt, dtype=np.float64)], axis=0)
    sq = np.sum(pooled * pooled, axis=1)
    d = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (pooled @ pooled.T), 0.0)
    iu = np.triu_indices(d.shape[0], k=1)
    vals = np.sort(d[iu])
    med = float(np.median(vals)) if vals.size else 0.0
    return med if med > 0 else 1.0


def _resolve_base(spec, zs, zt):
    spec.validate()
    if spec.base_bandwidth == "median":
        return median_bandwidth(zs, zt)
    return float(spec.base_bandwidth)


def _kernel_from_dists(dists, bandwidths):
    """Mean over the family of exp(-D / sigma_k^2); k(x, x) = 1 exactly."""
    acc = None
    for bw in bandwidths:
        term = E.exp(E.scale(dists, -1.0 / bw))
        acc = term if acc is None else E.add(acc, term)
    return E.scale(acc, 1.0 / len(bandwidths))


def gaussian_kernel(x, y, spec=None, base=None):
    """Kernel matrix between two point sets under the bandwidth family.

    ``base`` overrides the spec's bandwidth resolution (used when one batch
    comparison shares a single RKHS across several block matrices).
    """
    spec = spec or KernelSpec()
    x, y = _as_tensor(x), _as_tensor(y)
    if base is None:
        base = _resolve_base(spec, x.data, y.data)
    return _kernel_from_dists(pairwise_sq_dists(x, y), spec.bandwidths(base))


def mmd_biased(zs, zt, spec=None):
    """Biased empirical MMD^2: mean(K_ss) + mean(K_tt) - 2 mean(K_st)."""
    spec = spec or KernelSpec()
    zs, zt = _as_tensor(zs), _as_tensor(zt)
    if zs.shape[0] == 0 or zt.shape[0] == 0:
        raise ValueError("empty sample set")
    base = _resolve_base(spec, zs.data, zt.data)
    k_ss = gaussian_kernel(zs, zs, spec, base=base)
    k_tt = gaussian_kernel(zt, zt, spec, base=base)
    k_st = gaussian_kernel(zs, zt, spec, base=base)
    return E.add(E.add(E.tmean(k_ss), E.tmean(k_tt)), E.scale(E.tmean(k_st), -2.0))


def class_weights(assignments):
    """Column-normalized class weights (one-hot rows or probability rows).

    Returns (weights, valid) where weights[:, c] sums to 1 for every valid
    class; classes whose column sums to zero are flagged invalid instead of
    dividing by zero.
    """
    y = np.asarray(assignments, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("assignments must be (n, C)")
    if (y < 0).any():
        raise ValueError("negative class assignment")
    colsum = y.sum(axis=0)
    valid = colsum > 0
    safe = np.where(valid, colsum, 1.0)
    return y / safe, valid


def one_hot(labels, num_classes):
    """Labels 1..C -> one-hot rows (n, C)."""
    labels = np.asarray(labels)
    if labels.min() < 1 or labels.max() > num_classes:
        raise ValueError("labels must lie in 1..C")
    out = np.zeros((labels.size, num_classes), dtype=np.float64)
    out[np.arange(labels.size), labels - 1] = 1.0
    return out


def lmmd(zs, ys_onehot, zt, pt_probs, spec=None):
    """Class-conditional MMD between weighted source/target feature means.

    ``ys_onehot`` and ``pt_probs`` are data (no gradient flows through the
    weights); gradients reach the feature matrices only.  Classes absent on
    either side are excluded and the average runs over the valid classes.
    Returns a zero-expression when no class is valid.
    """
    spec = spec or KernelSpec()
    zs, zt = _as_tensor(zs), _as_tensor(zt)
    ws, valid_s = class_weights(ys_onehot)
    wt, valid_t = class_weights(pt_probs)
    if ws.shape[1] != wt.shape[1]:
        raise ValueError("source and target class counts differ")
    valid = valid_s & valid_t
    if not valid.any():
        log.warning("no class present on both sides of the batch; alignment loss is 0")
        return Tensor(np.zeros((), dtype=zs.dtype))

    base = _resolve_base(spec, zs.data, zt.data)
    k_ss = gaussian_kernel(zs, zs, spec, base=base)
    k_tt = gaussian_kernel(zt, zt, spec, base=base)
    k_st = gaussian_kernel(zs, zt, spec, base=base)

    dtype = zs.dtype
    total = None
    for c in np.nonzero(valid)[0]:
        wsc = Tensor(ws[:, c : c + 1].astype(dtype))
        wtc = Tensor(wt[:, c : c + 1].astype(dtype))
        ss = E.matmul(E.matmul(E.transpose(wsc), k_ss), wsc)
        tt = E.matmul(E.matmul(E.transpose(wtc), k_tt), wtc)
        st = E.matmul(E.matmul(E.transpose(wsc), k_st), wtc)
        term = E.add(E.add(ss, tt), E.scale(st, -2.0))
        total = term if total is None else E.add(total, term)
    return E.reshape(E.scale(total, 1.0 / int(valid.sum())), ())


def lmmd_oracle(zs, ys_onehot, zt, pt_probs, spec=None):
    """Literal triple-loop expansion of the class-conditional MMD.

    No vectorization, no algebraic simplification: weights per Eq.-style
    column normalization, then sums of w_i w_j k(x_i, x_j) over every pair,
    averaged over valid classes.  The trusted reference for ``lmmd``.
    """
    spec = spec or KernelSpec()
    spec.validate()
    zs = np.asarray(zs.data if isinstance(zs, Tensor) else zs, dtype=np.float64)
    zt = np.asarray(zt.data if isinstance(zt, Tensor) else zt, dtype=np.float64)
    ys = np.asarray(ys_onehot, dtype=np.float64)
    pt = np.asarray(pt_probs, dtype=np.float64)
    n_s, n_t = zs.shape[0], zt.shape[0]
    num_classes = ys.shape[1]

    if spec.base_bandwidth == "median":
        pooled = [zs[i] for i in range(n_s)] + [zt[j] for j in range(n_t)]
        dists = []
        for i in range(len(pooled)):
            for j in range(i + 1, len(pooled)):
                diff = pooled[i] - pooled[j]
                dists.append(float(np.dot(diff, diff)))
        dists.sort()
        if not dists:
            base = 1.0
        else:
            mid = len(dists) // 2
            base = dists[mid] if len(dists) % 2 == 1 else 0.5 * (dists[mid - 1] + dists[mid])
            if base <= 0:
                base = 1.0
    else:
        base = float(spec.base_bandwidth)
    bandwidths = spec.bandwidths(base)

    def kern(a, b):
        diff = a - b
        d2 = float(np.dot(diff, diff))
        return sum(math.exp(-d2 / bw) for bw in bandwidths) / len(bandwidths)

    total = 0.0
    valid_count = 0
    for c in range(num_classes):
        s_col = ys[:, c]
        t_col = pt[:, c]
        s_sum = float(s_col.sum())
        t_sum = float(t_col.sum())
        if s_sum <= 0 or t_sum <= 0:
            continue
        valid_count += 1
        w_s = [float(v) / s_sum for v in s_col]
        w_t = [float(v) / t_sum for v in t_col]
        term = 0.0
        for i in range(n_s):
            for j in range(n_s):
                term += w_s[i] * w_s[j] * kern(zs[i], zs[j])
        for i in range(n_t):
            for j in range(n_t):
                term += w_t[i] * w_t[j] * kern(zt[i], zt[j])
        for i in range(n_s):
            for j in range(n_t):
                term -= 2.0 * w_s[i] * w_t[j] * kern(zs[i], zt[j])
        total += term
    if valid_count == 0:
        return 0.0
    return total / valid_count
