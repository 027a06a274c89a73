"""Task losses, coupled-weight regularizers and the kernel MMD regularizer.

Every function returns its value together with analytic gradients so the
trainer can chain them through the layer kernels.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

MULTICLASS_HINGE = "multiclass_hinge"
SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"
SQUARED_ERROR = "squared_error"
TASK_LOSSES = (MULTICLASS_HINGE, SOFTMAX_CROSS_ENTROPY, SQUARED_ERROR)

L2 = "l2"
EXPONENTIAL = "exponential"
COUPLING_FORMS = (L2, EXPONENTIAL)

# exp() overflows float64 just above 709.78
_EXP_LIMIT = 709.0


def is_classification(kind: str) -> bool:
    if kind not in TASK_LOSSES:
        raise ValueError(f"unknown task loss {kind!r}; choose from {TASK_LOSSES}")
    return kind != SQUARED_ERROR


def task_loss(kind: str, scores: np.ndarray, target: np.ndarray):
    """Batch-averaged task loss and its gradient w.r.t. ``scores``.

    ``scores`` is (N, K). For the classifiers ``target`` holds N integer
    labels in [0, K); for ``squared_error`` it is an (N, K) float array.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError(f"scores must be a non-empty (N, K) batch, got shape {scores.shape}")
    n, k = scores.shape

    if kind == SQUARED_ERROR:
        target = np.asarray(target)
        if target.dtype.kind in "iub":
            raise ValueError("squared_error needs real-valued regression targets, not integer labels")
        target = target.astype(np.float64)
        if target.shape != scores.shape:
            raise ValueError(f"regression target shape {target.shape} != scores shape {scores.shape}")
        diff = scores - target
        return float(np.sum(diff * diff) / n), 2.0 * diff / n

    if not is_classification(kind):  # pragma: no cover - guarded above
        raise ValueError(kind)
    labels = np.asarray(target)
    if labels.dtype.kind not in "iu":
        raise ValueError(f"{kind} needs integer class labels")
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range for {k} classes")
    rows = np.arange(n)

    if kind == SOFTMAX_CROSS_ENTROPY:
        shifted = scores - scores.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_p = shifted - log_z
        loss = -log_p[rows, labels].sum() / n
        grad = np.exp(log_p)
        grad[rows, labels] -= 1.0
        return float(loss), grad / n

    # Crammer-Singer style: sum over wrong classes of max(0, 1 + s_k - s_y)
    margins = 1.0 + scores - scores[rows, labels][:, None]
    margins[rows, labels] = 0.0
    active = margins > 0
    loss = np.where(active, margins, 0.0).sum() / n
    grad = active.astype(np.float64)
    grad[rows, labels] = -active.sum(axis=1)
    return float(loss), grad / n


def coupling_loss(form: str, a: float, b: float, theta_s: np.ndarray, theta_t: np.ndarray):
    """Affine weight regularizer between corresponding source and target parameters.

    Returns ``(loss, d_theta_s, d_theta_t, d_a, d_b)``.
    """
    theta_s = np.asarray(theta_s, dtype=np.float64)
    theta_t = np.asarray(theta_t, dtype=np.float64)
    if theta_s.shape != theta_t.shape:
        raise ValueError(f"coupled parameter shapes differ: {theta_s.shape} vs {theta_t.shape}")
    a = float(a)
    b = float(b)
    resid = a * theta_s + b - theta_t
    q = float(np.sum(resid * resid))
    if form == L2:
        loss, scale = q, 1.0
    elif form == EXPONENTIAL:
        if q > _EXP_LIMIT:
            inf = np.full_like(theta_s, math.inf)
            return math.inf, inf, inf, math.inf, math.inf
        scale = math.exp(q)
        loss = math.expm1(q)
    else:
        raise ValueError(f"unknown coupling form {form!r}; choose from {COUPLING_FORMS}")
    g = 2.0 * scale * resid
    return loss, a * g, -g, float(np.sum(g * theta_s)), float(np.sum(g))


def rbf_kernel(u: np.ndarray, v: np.ndarray, sigma: float = 1.0) -> float:
    """exp(-||u - v||^2 / sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"kernel arguments differ in shape: {u.shape} vs {v.shape}")
    d = u - v
    return math.exp(-float(np.sum(d * d)) / sigma)


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = np.sum(x * x, axis=1)[:, None] + np.sum(y * y, axis=1)[None, :] - 2.0 * (x @ y.T)
    return np.maximum(d, 0.0)


def gram(x: np.ndarray, y: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """RBF Gram matrix between the rows of ``x`` and ``y``."""
    return np.exp(-_sq_dists(x, y) / sigma)


def mmd2(features_s: np.ndarray, features_t: np.ndarray, sigma: float = 1.0):
    """Biased (V-statistic) squared MMD between two feature batches.

    Returns ``(value, grad_s, grad_t)`` with gradients per feature row.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    fs = np.asarray(features_s, dtype=np.float64)
    ft = np.asarray(features_t, dtype=np.float64)
    fs = fs.reshape(fs.shape[0], -1) if fs.ndim != 2 else fs
    ft = ft.reshape(ft.shape[0], -1) if ft.ndim != 2 else ft
    if fs.shape[0] == 0 or ft.shape[0] == 0:
        raise ValueError("MMD needs non-empty source and target batches")
    if fs.shape[1] != ft.shape[1]:
        raise ValueError(f"feature dimensions differ: {fs.shape[1]} vs {ft.shape[1]}")
    ns, nt = fs.shape[0], ft.shape[0]
    kss = gram(fs, fs, sigma)
    kst = gram(fs, ft, sigma)
    ktt = gram(ft, ft, sigma)
    value = kss.sum() / ns**2 - 2.0 * kst.sum() / (ns * nt) + ktt.sum() / nt**2

    # d k(u, v) / du = -(2 / sigma) (u - v) k(u, v)
    c = -2.0 / sigma

    def pull(k, x, y):
        return c * (k.sum(axis=1)[:, None] * x - k @ y)

    grad_s = 2.0 * pull(kss, fs, fs) / ns**2 - 2.0 * pull(kst, fs, ft) / (ns * nt)
    grad_t = 2.0 * pull(ktt, ft, ft) / nt**2 - 2.0 * pull(kst.T, ft, fs) / (ns * nt)
    return float(value), grad_s, grad_t


def total_loss(
    l_s: float,
    l_t: Optional[float],
    r_w: Sequence[float],
    r_u: Optional[float],
    lambda_w: float = 1.0,
    lambda_u: float = 1.0,
) -> float:
    """L_s + L_t + lambda_w * sum(r_w) + lambda_u * r_u; ``None`` terms are absent."""
    parts = [l_s, 0.0 if l_t is None else l_t, *r_w, 0.0 if r_u is None else r_u]
    if not all(math.isfinite(p) for p in parts):
        raise ValueError(f"non-finite loss term in {parts}")
    total = l_s
    if l_t is not None:
        total += l_t
    total += lambda_w * float(sum(r_w))
    if r_u is not None:
        total += lambda_u * r_u
    return float(total)
