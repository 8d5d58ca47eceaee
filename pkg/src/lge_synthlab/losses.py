"""Segmentation losses on probability maps.

A probability map is an array of shape ``(C, H, W, D)`` holding post-softmax
class probabilities per voxel; targets are integer label grids ``(H, W, D)``.
The Dice term averages foreground classes only (class 0 excluded).
"""

from dataclasses import dataclass

import numpy as np

from .errors import AbsentClass, BoundaryPoint, DimsMismatch, LabelOutOfRange, ShapeMismatch

__all__ = [
    "ProbMap",
    "ClassWeights",
    "soft_dice",
    "cross_entropy",
    "shape_consistency_loss",
    "class_weights",
    "l1_loss",
    "loss_gradient",
    "grad_check",
    "one_hot",
    "DICE_SMOOTH",
    "CE_CLAMP",
]

DICE_SMOOTH = 1e-5
CE_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class ProbMap:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 4 or p.shape[0] < 2:
            raise ShapeMismatch(f"probability map must be (C>=2, H, W, D), got {p.shape}")
        if np.any(p < 0) or not np.allclose(p.sum(axis=0), 1.0, rtol=0, atol=1e-6):
            raise ValueError("per-voxel probabilities must be >= 0 and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def classes(self):
        return self.probs.shape[0]

    @property
    def dims(self):
        return self.probs.shape[1:]


@dataclass(frozen=True, eq=False)
class ClassWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w <= 0):
            raise ValueError("class weights must be positive")
        object.__setattr__(self, "weights", w)


def _probs(pred):
    return pred.probs if isinstance(pred, ProbMap) else np.asarray(pred, dtype=np.float64)


def _target(target, probs):
    t = np.asarray(getattr(target, "labels", target))
    if t.shape != probs.shape[1:]:
        raise DimsMismatch(f"target {t.shape} vs prediction {probs.shape[1:]}")
    if t.size and (t.min() < 0 or t.max() >= probs.shape[0]):
        raise LabelOutOfRange(f"labels must lie in 0..{probs.shape[0] - 1}")
    return t.astype(np.intp)


def one_hot(labels, classes):
    labels = np.asarray(getattr(labels, "labels", labels)).astype(np.intp)
    return (np.arange(classes).reshape((-1,) + (1,) * labels.ndim) == labels).astype(np.float64)


def _dice_parts(p, t, smooth):
    onehot = one_hot(t, p.shape[0])
    axes = tuple(range(1, p.ndim))
    inter = (p * onehot).sum(axis=axes)
    psum = p.sum(axis=axes)
    tsum = onehot.sum(axis=axes)
    return onehot, inter, psum, tsum


def soft_dice(pred, target, smooth=DICE_SMOOTH):
    """Soft Dice per class and the mean over foreground classes.

    Returns ``(per_class, mean_foreground)``.
    """
    p = _probs(pred)
    t = _target(target, p)
    _, inter, psum, tsum = _dice_parts(p, t, smooth)
    per_class = (2.0 * inter + smooth) / (psum + tsum + smooth)
    return per_class, float(per_class[1:].mean())


def _weights(w, classes):
    if w is None:
        return np.ones(classes)
    w = w.weights if isinstance(w, ClassWeights) else np.asarray(w, dtype=np.float64)
    if w.shape != (classes,):
        raise ShapeMismatch(f"expected {classes} class weights, got {w.shape}")
    return w


def cross_entropy(pred, target, w=None, clamp=CE_CLAMP):
    """Weighted CE on probabilities: mean of ``-w_t log(max(p_t, clamp))``."""
    p = _probs(pred)
    t = _target(target, p)
    w = _weights(w, p.shape[0])
    pt = np.take_along_axis(p, t[None], axis=0)[0]
    return float(np.mean(-w[t] * np.log(np.maximum(pt, clamp))))


def shape_consistency_loss(pred, target, w=None):
    """``(1 - mean foreground Dice) + CE`` for one volume."""
    _, dice = soft_dice(pred, target)
    return (1.0 - dice) + cross_entropy(pred, target, w)


def class_weights(target, classes):
    """Weights proportional to inverse voxel counts, scaled to sum to C."""
    t = np.asarray(getattr(target, "labels", target)).ravel()
    if t.size and (t.min() < 0 or t.max() >= classes):
        raise LabelOutOfRange(f"labels must lie in 0..{classes - 1}")
    counts = np.bincount(t, minlength=classes)
    for c, n in enumerate(counts):
        if n == 0:
            raise AbsentClass(c)
    raw = 1.0 / counts
    return ClassWeights(raw * classes / raw.sum())


def l1_loss(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise DimsMismatch(f"dims differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


# --- gradients ------------------------------------------------------------------

def _l1_prob_loss(p, t):
    return float(np.mean(np.abs(p - one_hot(t, p.shape[0]))))


_LOSSES = {
    "soft_dice": lambda p, t, w: 1.0 - soft_dice(p, t)[1],
    "cross_entropy": lambda p, t, w: cross_entropy(p, t, w),
    "shape_consistency": lambda p, t, w: shape_consistency_loss(p, t, w),
    "l1": lambda p, t, w: _l1_prob_loss(p, t),
}


def loss_gradient(name, pred, target, w=None, smooth=DICE_SMOOTH, clamp=CE_CLAMP):
    """Analytic gradient of a loss with respect to every probability entry.

    Each entry is treated as a free variable (no simplex projection).
    """
    if name not in _LOSSES:
        raise ValueError(f"unknown loss {name!r}")
    p = _probs(pred)
    t = _target(target, p)
    n_vox = t.size
    if name == "l1":
        return np.sign(p - one_hot(t, p.shape[0])) / p.size
    grad = np.zeros_like(p)
    if name in ("soft_dice", "shape_consistency"):
        onehot, inter, psum, tsum = _dice_parts(p, t, smooth)
        denom = (psum + tsum + smooth).reshape((-1,) + (1,) * t.ndim)
        numer = (2.0 * inter + smooth).reshape(denom.shape)
        d_dice = (2.0 * onehot * denom - numer) / denom ** 2
        d_dice[0] = 0.0
        grad -= d_dice / (p.shape[0] - 1)
    if name in ("cross_entropy", "shape_consistency"):
        wt = _weights(w, p.shape[0])[t]
        pt = np.take_along_axis(p, t[None], axis=0)[0]
        g = np.where(pt > clamp, -wt / (n_vox * pt), 0.0)
        np.put_along_axis(grad, t[None], np.take_along_axis(grad, t[None], axis=0) + g[None], axis=0)
    return grad


def grad_check(loss, pred, target, h=1e-5, w=None):
    """Worst-case relative error of the analytic gradient.

    Compares :func:`loss_gradient` against central finite differences with
    step ``h`` on every entry; the error is
    ``max|g_analytic - g_fd| / max|g_fd|``.
    """
    p = _probs(pred).copy()
    t = _target(target, p)
    if p.min() <= 10 * h:
        raise BoundaryPoint(f"min probability {p.min():.3g} must exceed 10h = {10 * h:.3g}")
    if loss not in _LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    f = _LOSSES[loss]
    analytic = loss_gradient(loss, p, t, w)
    numeric = np.empty_like(p)
    flat = p.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(p, t, w)
        flat[i] = orig - h
        down = f(p, t, w)
        flat[i] = orig
        numeric.flat[i] = (up - down) / (2 * h)
    scale = max(np.abs(numeric).max(), np.finfo(float).tiny)
    return float(np.abs(analytic - numeric).max() / scale)
