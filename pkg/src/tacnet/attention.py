"""Spatial and iterative topology attention over stacks of likelihood maps.

The spatial step correlates the critical-point map of the focused slice
(query) with the critical-point maps of every slice in the window (key),
turns the correlations into a row-stochastic similarity map, and uses it
to aggregate the focused likelihood map. The iterative step blends the
aggregated map with the one from the previous epoch.
"""

from dataclasses import dataclass

import numpy as np

from ._parallel import ordered_map
from .field import ParameterError
from .persistence import DEFAULT_EPSILON, DEFAULT_SIGMA, critical_point_map

DEFAULT_PATCH = 39
DEFAULT_BETA = 0.5


class StructureError(ValueError):
    """Mismatched shapes between attention operands."""


@dataclass(frozen=True)
class QueryKeyPack:
    q: np.ndarray  # (C, N), every row the focused slice's CP map
    k: np.ndarray  # (C, N), row c the CP map of slice c
    shape: tuple   # (H, W) of the patch

    @property
    def channels(self):
        return self.q.shape[0]

    @property
    def pixels(self):
        return self.q.shape[1]


@dataclass
class AttentionState:
    """ITA state owned by one training loop; ``o_prev`` is None before the first epoch."""

    attention_weight: float = 0.0
    beta: float = DEFAULT_BETA
    o_prev: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterError(f"beta must lie in [0, 1], got {self.beta}")


def build_query_key(cp_maps, center_index):
    maps = [np.asarray(m, dtype=np.float64) for m in cp_maps]
    if not maps:
        raise StructureError("need at least one critical-point map")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise StructureError("critical-point maps differ in shape")
    if not 0 <= center_index < len(maps):
        raise StructureError(f"center_index {center_index} out of range for {len(maps)} maps")
    k = np.stack([m.ravel() for m in maps])
    q = np.repeat(k[center_index][None, :], len(maps), axis=0)
    return QueryKeyPack(q=q, k=k, shape=shape)


def similarity(pack):
    """SM[n, m] = softmax over m of sum_c q[c, m] * k[c, n]."""
    scores = pack.k.T @ pack.q
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=1, keepdims=True)
    return scores


def attend(p_center, sm):
    p = np.asarray(p_center, dtype=np.float64)
    n = p.size
    if sm.shape != (n, n):
        raise StructureError(f"similarity map {sm.shape} does not match {n} pixels")
    return (sm @ p.ravel()).reshape(p.shape)


def sta_combine(p_center, o, attention_weight):
    p = np.asarray(p_center, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    if p.shape != o.shape:
        raise StructureError(f"shape mismatch {p.shape} vs {o.shape}")
    return np.clip(attention_weight * o + p, 0.0, 1.0)


def ita_update(state, o_curr):
    """Blend ``o_curr`` with the stored previous output and store the result."""
    o_curr = np.asarray(o_curr, dtype=np.float64)
    if state.o_prev is None:
        out = o_curr.copy()
    else:
        if state.o_prev.shape != o_curr.shape:
            raise StructureError(f"shape mismatch {state.o_prev.shape} vs {o_curr.shape}")
        out = state.beta * state.o_prev + (1.0 - state.beta) * o_curr
    state.o_prev = out
    return out


def patch_attention(prob_stack, center_index, epsilon=DEFAULT_EPSILON,
                    sigma=DEFAULT_SIGMA, kernels=None):
    """STA on one patch: returns ``(o, sm, cp_maps)`` for the focused slice."""
    cps = [critical_point_map(p, epsilon, sigma, kernels) for p in prob_stack]
    sm = similarity(build_query_key(cps, center_index))
    return attend(prob_stack[center_index], sm), sm, np.stack(cps)


def tile_starts(size, patch):
    """Non-overlapping starts plus one border-flush start when ``patch`` does not divide ``size``."""
    if patch > size:
        raise ParameterError(f"patch {patch} larger than extent {size}")
    starts = list(range(0, size - patch + 1, patch))
    if starts[-1] + patch < size:
        starts.append(size - patch)
    return starts


def tile_and_stitch(stack, patch, process):
    """Apply ``process`` to every ``patch x patch`` tile of a ``(l, H, W)`` stack.

    ``process`` maps an ``(l, patch, patch)`` array to ``(c, patch, patch)``;
    overlapping pixels of the border-flush tiles are averaged.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[None]
    _, h, w = stack.shape
    if patch < 3:
        raise ParameterError(f"patch must be >= 3, got {patch}")
    if patch > min(h, w):
        raise ParameterError(f"patch {patch} larger than image {h}x{w}")
    total = None
    count = np.zeros((h, w))
    for r in tile_starts(h, patch):
        for c in tile_starts(w, patch):
            out = np.asarray(process(stack[:, r:r + patch, c:c + patch]), dtype=np.float64)
            if out.ndim == 2:
                out = out[None]
            if total is None:
                total = np.zeros((out.shape[0], h, w))
            total[:, r:r + patch, c:c + patch] += out
            count[r:r + patch, c:c + patch] += 1.0
    return total / count


class AttentionOperator:
    """Linear map p -> o built from a fixed set of per-tile similarity maps.

    Tiles are ``(row, col, sm)`` with ``patch x patch`` extent; overlaps
    are averaged. The operator is a constant under differentiation, so only
    :meth:`apply` and its adjoint are needed.
    """

    def __init__(self, shape, patch, tiles):
        self.shape = tuple(shape)
        self.patch = patch
        self.tiles = tiles
        self.count = np.zeros(self.shape)
        for r, c, sm in tiles:
            if sm.shape != (patch * patch, patch * patch):
                raise StructureError(f"tile map {sm.shape} does not match patch {patch}")
            self.count[r:r + patch, c:c + patch] += 1.0
        if np.any(self.count == 0):
            raise StructureError("attention tiles do not cover the image")

    def apply(self, p):
        out = np.zeros(self.shape)
        for r, c, sm in self.tiles:
            side = self.patch
            tile = p[r:r + side, c:c + side]
            out[r:r + side, c:c + side] += (sm @ tile.ravel()).reshape(side, side)
        return out / self.count

    def adjoint(self, g):
        g = g / self.count
        out = np.zeros(self.shape)
        for r, c, sm in self.tiles:
            side = self.patch
            tile = g[r:r + side, c:c + side]
            out[r:r + side, c:c + side] += (sm.T @ tile.ravel()).reshape(side, side)
        return out


def build_operator(prob_stack, center_index, patch, epsilon=DEFAULT_EPSILON,
                   sigma=DEFAULT_SIGMA, kernels=None):
    """Attention operator for the focused slice of a ``(l, H, W)`` likelihood stack.

    Critical points are extracted per ``patch x patch`` tile, matching
    :func:`tile_and_stitch` tiling.
    """
    probs = np.asarray(prob_stack, dtype=np.float64)
    _, h, w = probs.shape
    if patch > min(h, w):
        raise ParameterError(f"patch {patch} larger than image {h}x{w}")
    corners = [(r, c) for r in tile_starts(h, patch) for c in tile_starts(w, patch)]

    def one(rc):
        r, c = rc
        tile = probs[:, r:r + patch, c:c + patch]
        cps = [critical_point_map(t, epsilon, sigma, kernels) for t in tile]
        return r, c, similarity(build_query_key(cps, center_index))

    tiles = ordered_map(one, corners)
    return AttentionOperator((h, w), patch, tiles)
