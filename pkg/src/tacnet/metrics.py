"""Segmentation metrics: Dice, adapted Rand F-score, variation of information, Betti error."""

import numpy as np
from scipy import ndimage

from .field import ParameterError, as_mask
from .persistence import betti_numbers

_CONN4 = ndimage.generate_binary_structure(2, 1)


class UndefinedInputError(ValueError):
    """A metric has no pixels to evaluate."""


def canonical_labels(labels):
    """Relabel non-zero labels to 1..K in first-encounter row-major order; 0 is kept."""
    lab = np.asarray(labels)
    values, first, inverse = np.unique(lab.ravel(), return_index=True, return_inverse=True)
    idx = np.flatnonzero(values != 0)
    idx = idx[np.argsort(first[idx], kind="stable")]
    new_ids = np.zeros(len(values), dtype=np.int64)
    new_ids[idx] = np.arange(1, len(idx) + 1)
    return new_ids[inverse].reshape(lab.shape)


def label_regions(mask):
    """Label 4-connected non-membrane regions 1..K; membrane pixels get 0."""
    m = as_mask(mask)
    lab, _ = ndimage.label(~m, structure=_CONN4)
    return canonical_labels(lab)


def remove_small_components(mask, min_size):
    """Drop 4-connected foreground components with fewer than ``min_size`` pixels."""
    m = as_mask(mask)
    if min_size <= 0:
        return m.copy()
    lab, n = ndimage.label(m, structure=_CONN4)
    if n == 0:
        return m.copy()
    sizes = np.bincount(lab.ravel())
    keep = sizes >= min_size
    keep[0] = False
    return keep[lab]


def dice(a, b):
    a, b = as_mask(a), as_mask(b)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def contingency(pred, gt):
    """Joint label counts over pixels whose gt label is non-zero."""
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ParameterError(f"shape mismatch {pred.shape} vs {gt.shape}")
    keep = gt != 0
    if not keep.any():
        raise UndefinedInputError("every pixel is excluded (gt label 0)")
    _, pi = np.unique(pred[keep], return_inverse=True)
    _, gi = np.unique(gt[keep], return_inverse=True)
    table = np.zeros((pi.max() + 1, gi.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, gi), 1)
    return table


def adapted_rand_index(pred, gt):
    """F-score of pairwise co-membership precision and recall (1 is perfect)."""
    n = contingency(pred, gt).astype(np.float64)
    sum_ij = np.sum(n * n)
    sum_pred = np.sum(n.sum(axis=1) ** 2)
    sum_gt = np.sum(n.sum(axis=0) ** 2)
    precision = sum_ij / sum_pred
    recall = sum_ij / sum_gt
    return 2.0 * precision * recall / (precision + recall)


def _entropy(counts, total):
    # sorted so the sum does not depend on label order (keeps VOI exactly symmetric)
    p = np.sort(counts[counts > 0]) / total
    return -float(np.sum(p * np.log(p)))


def variation_of_information(pred, gt):
    """H(pred | gt) + H(gt | pred) in nats."""
    n = contingency(pred, gt).astype(np.float64)
    total = n.sum()
    h_joint = _entropy(n.ravel(), total)
    h_pred = _entropy(n.sum(axis=1), total)
    h_gt = _entropy(n.sum(axis=0), total)
    return max(0.0, 2.0 * h_joint - (h_pred + h_gt))


def patch_positions(shape, patch, samples, seed):
    h, w = shape
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    if patch > min(h, w):
        raise ParameterError(f"patch {patch} larger than image {h}x{w}")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, h - patch + 1, size=samples)
    cols = rng.integers(0, w - patch + 1, size=samples)
    return list(zip(rows.tolist(), cols.tolist()))


def betti_error(pred, gt, patch=64, samples=100, seed=0, include_beta0=False):
    """Mean absolute Betti-number difference over seeded random patches."""
    pred, gt = as_mask(pred), as_mask(gt)
    if pred.shape != gt.shape:
        raise ParameterError(f"shape mismatch {pred.shape} vs {gt.shape}")
    errs = []
    for r, c in patch_positions(pred.shape, patch, samples, seed):
        bp = betti_numbers(pred[r:r + patch, c:c + patch])
        bg = betti_numbers(gt[r:r + patch, c:c + patch])
        e = abs(bp[1] - bg[1])
        if include_beta0:
            e += abs(bp[0] - bg[0])
        errs.append(e)
    return float(np.mean(errs))
