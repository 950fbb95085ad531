"""Superlevel-set persistent homology of 2D fields and derived critical pixels.

Dimension 0 is computed by an elder-rule union-find over pixels in
decreasing value (4-connectivity). Dimension 1 uses duality: holes of the
4-connected superlevel set are the bounded 8-connected components of the
strict sublevel complement, so the same union-find runs over the reversed
order with 8-connectivity and a virtual outer frame.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _backend
from .field import ParameterError, as_field, as_mask, gaussian_smooth

DEFAULT_EPSILON = 0.01
DEFAULT_SIGMA = 1.5

_CONN4 = ndimage.generate_binary_structure(2, 1)
_CONN8 = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class PersistencePair:
    dim: int
    birth_value: float
    death_value: float
    birth_pixel: tuple
    death_pixel: tuple
    essential: bool = False

    @property
    def persistence(self):
        return self.birth_value - self.death_value


@dataclass(frozen=True)
class PersistenceDiagram:
    """Columnar diagram; row 0 is always the essential dim-0 pair."""

    dims: np.ndarray
    births: np.ndarray
    deaths: np.ndarray
    birth_pixels: np.ndarray  # (K, 2) row, col
    death_pixels: np.ndarray
    shape: tuple

    def __len__(self):
        return len(self.dims)

    @property
    def essential(self):
        return self[0]

    def __getitem__(self, i):
        return PersistencePair(
            int(self.dims[i]), float(self.births[i]), float(self.deaths[i]),
            tuple(int(v) for v in self.birth_pixels[i]),
            tuple(int(v) for v in self.death_pixels[i]),
            essential=(i == 0),
        )

    @property
    def pairs(self):
        return [self[i] for i in range(len(self))]

    @property
    def persistence(self):
        return self.births - self.deaths

    def rows(self):
        """Plain-text rows ``dim birth death b_row b_col d_row d_col``."""
        return [
            f"{d} {b!r} {x!r} {br} {bc} {dr} {dc}"
            for d, b, x, (br, bc), (dr, dc) in zip(
                self.dims.tolist(), self.births.tolist(), self.deaths.tolist(),
                self.birth_pixels.tolist(), self.death_pixels.tolist())
        ]


def filtration_order(values):
    """Flat pixel indices by decreasing value, ties broken row-major."""
    return np.argsort(-np.ravel(values), kind="stable")


def superlevel_diagram(field, kernels=None):
    f = as_field(field)
    k = kernels or _backend.kernels
    h, w = f.shape
    flat = f.ravel()
    order = filtration_order(f)

    b0, d0, _ = k.merge_pairs(order, h, w, False, False)
    # reversed order = strict-sublevel sweep of the complement
    d1, b1, _ = k.merge_pairs(order[::-1].copy(), h, w, True, True)

    birth_px = np.concatenate([[order[0]], b0, b1])
    death_px = np.concatenate([[order[-1]], d0, d1])
    dims = np.concatenate([[0], np.zeros(len(b0), np.int64), np.ones(len(b1), np.int64)])
    births = flat[birth_px]
    deaths = flat[death_px]
    keep = births > deaths
    keep[0] = True  # essential pair may be degenerate on constant fields
    birth_px, death_px = birth_px[keep], death_px[keep]
    return PersistenceDiagram(
        dims=dims[keep].astype(np.int64),
        births=births[keep],
        deaths=deaths[keep],
        birth_pixels=np.stack(np.divmod(birth_px, w), axis=1),
        death_pixels=np.stack(np.divmod(death_px, w), axis=1),
        shape=(h, w),
    )


def _critical_flat(diagram, epsilon):
    if epsilon < 0:
        raise ParameterError(f"epsilon must be non-negative, got {epsilon}")
    sel = diagram.persistence >= epsilon
    sel[0] = False
    px = np.concatenate([diagram.birth_pixels[:1], diagram.birth_pixels[sel],
                         diagram.death_pixels[sel]])
    return np.unique(px[:, 0] * diagram.shape[1] + px[:, 1])


def critical_pixels(diagram, epsilon=DEFAULT_EPSILON):
    """Birth and death pixels of pairs with persistence >= epsilon, plus the global max.

    Returned sorted in row-major order without duplicates.
    """
    flat = _critical_flat(diagram, epsilon)
    rows, cols = np.divmod(flat, diagram.shape[1])
    return list(zip(rows.tolist(), cols.tolist()))


def critical_point_map(field, epsilon=DEFAULT_EPSILON, sigma=DEFAULT_SIGMA, kernels=None):
    """Gaussian-smoothed indicator of the critical pixels of ``field``."""
    f = as_field(field)
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    indicator = np.zeros(f.size)
    indicator[_critical_flat(superlevel_diagram(f, kernels), epsilon)] = 1.0
    return gaussian_smooth(indicator.reshape(f.shape), sigma)


def betti_numbers(mask):
    """(beta0, beta1) of a mask: 4-connected foreground, 8-connected holes."""
    m = as_mask(mask)
    _, beta0 = ndimage.label(m, structure=_CONN4)
    background = np.pad(~m, 1, constant_values=True)
    _, nbg = ndimage.label(background, structure=_CONN8)
    return int(beta0), int(nbg - 1)
