"""Synthetic anisotropic membrane volumes with exact per-slice topology.

Rings are annuli that drift and breathe from slice to slice; the observed
image may lose short arcs of membrane (breaks) while the ground truth stays
closed, which is the failure mode topology-aware models should repair.
"""

import os
from dataclasses import asdict, dataclass

import numpy as np

from . import io
from .metrics import label_regions

STRUCTURES = ("rings", "membrane-tiling")


@dataclass
class SyntheticSpec:
    depth: int = 24
    height: int = 64
    width: int = 64
    structure: str = "rings"
    rings: int = 5
    radius_min: float = 5.0
    radius_max: float = 10.0
    thickness: float = 2.0
    cells: int = 12
    jitter: float = 1.0
    noise: float = 0.1
    break_prob: float = 0.5
    gap: float = 2.0
    background: float = 0.2
    foreground: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if not 0.0 <= self.break_prob <= 1.0:
            raise ValueError("break_prob must lie in [0, 1]")
        if min(self.depth, self.height, self.width) < 1:
            raise ValueError("volume dims must be positive")


def _ring_ok(rings, i, spec):
    cy, cx, r = rings[i]
    reach = r + spec.thickness / 2 + 2
    if cy - reach < 0 or cx - reach < 0 or cy + reach > spec.height - 1 or cx + reach > spec.width - 1:
        return False
    for j, (oy, ox, orad) in enumerate(rings):
        if j != i and np.hypot(cy - oy, cx - ox) < r + orad + spec.thickness + 3:
            return False
    return True


def _initial_rings(spec, rng):
    rings = []
    for _ in range(200 * spec.rings):
        if len(rings) == spec.rings:
            break
        r = rng.uniform(spec.radius_min, spec.radius_max)
        cand = [rng.uniform(0, spec.height - 1), rng.uniform(0, spec.width - 1), r]
        rings.append(cand)
        if not _ring_ok(rings, len(rings) - 1, spec):
            rings.pop()
    return rings


def _drift(rings, spec, rng):
    out = [list(r) for r in rings]
    for i in range(len(out)):
        step = rng.uniform(-spec.jitter, spec.jitter, size=3) * (1.0, 1.0, 0.5)
        old = out[i]
        new = [old[0] + step[0], old[1] + step[1],
               float(np.clip(old[2] + step[2], spec.radius_min, spec.radius_max))]
        out[i] = new
        if not _ring_ok(out, i, spec):
            out[i] = old
    return out


def render_rings(rings, spec, rng=None, break_prob=0.0):
    """Ground-truth membrane and the (possibly broken) observed membrane."""
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    gt = np.zeros((spec.height, spec.width), dtype=bool)
    seen = np.zeros_like(gt)
    for cy, cx, r in rings:
        d = np.hypot(yy - cy, xx - cx)
        ring = np.abs(d - r) <= spec.thickness / 2
        gt |= ring
        if rng is not None and break_prob > 0 and rng.uniform() < break_prob:
            theta0 = rng.uniform(-np.pi, np.pi)
            ang = np.angle(np.exp(1j * (np.arctan2(yy - cy, xx - cx) - theta0)))
            ring = ring & (np.abs(ang) * r > spec.gap / 2)
        seen |= ring
    return gt, seen


def _tiling(seeds, spec):
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    d = np.hypot(yy[None] - seeds[:, 0, None, None], xx[None] - seeds[:, 1, None, None])
    d.sort(axis=0)
    return (d[1] - d[0]) <= spec.thickness


def _break_tiling(gt, spec, rng):
    seen = gt.copy()
    if rng.uniform() < spec.break_prob:
        rows, cols = np.nonzero(gt)
        if len(rows):
            k = rng.integers(len(rows))
            half = int(np.ceil(spec.gap / 2)) + 1
            r, c = rows[k], cols[k]
            seen[max(r - half, 0):r + half + 1, max(c - half, 0):c + half + 1] = False
    return seen


def generate(spec):
    """Return ``(image, membrane, labels, topology)``.

    ``topology`` is a list of per-slice ``(beta0, beta1)`` known by
    construction for rings, or None for tilings.
    """
    rng = np.random.default_rng(spec.seed)
    shape = (spec.depth, spec.height, spec.width)
    image = np.empty(shape)
    membrane = np.empty(shape, dtype=bool)
    topology = [] if spec.structure == "rings" else None
    if spec.structure == "rings":
        rings = _initial_rings(spec, rng)
    else:
        seeds = rng.uniform(0, 1, size=(spec.cells, 2)) * (spec.height, spec.width)
    for z in range(spec.depth):
        if spec.structure == "rings":
            if z:
                rings = _drift(rings, spec, rng)
            gt, seen = render_rings(rings, spec, rng, spec.break_prob)
            topology.append((len(rings), len(rings)))
        else:
            if z:
                seeds = seeds + rng.uniform(-spec.jitter, spec.jitter, size=seeds.shape)
            gt = _tiling(seeds, spec)
            seen = _break_tiling(gt, spec, rng)
        img = np.where(seen, spec.foreground, spec.background)
        if spec.noise > 0:
            img = img + rng.normal(0.0, spec.noise, size=img.shape)
        image[z] = np.clip(img, 0.0, 1.0)
        membrane[z] = gt
    labels = np.stack([label_regions(m) for m in membrane])
    return image, membrane, labels, topology


def gen_data(spec, out_dir):
    """Write ``image.tact``, ``membrane.tact``, ``labels.tact`` (and ``topology.csv`` for rings)."""
    os.makedirs(out_dir, exist_ok=True)
    image, membrane, labels, topology = generate(spec)
    io.write_tensor(os.path.join(out_dir, "image.tact"), image)
    io.write_tensor(os.path.join(out_dir, "membrane.tact"), membrane)
    io.write_tensor(os.path.join(out_dir, "labels.tact"), labels)
    with open(os.path.join(out_dir, "synthetic.cfg"), "w", encoding="utf-8") as fh:
        for k, v in asdict(spec).items():
            fh.write(f"{k} = {v}\n")
    if topology is not None:
        with open(os.path.join(out_dir, "topology.csv"), "w", encoding="utf-8") as fh:
            fh.write("slice,beta0,beta1\n")
            for z, (b0, b1) in enumerate(topology):
                fh.write(f"{z},{b0},{b1}\n")
    return out_dir


def load_dataset(data_dir):
    """Read a generated dataset back as ``(image, membrane, labels)`` arrays."""
    image = io.read_tensor(os.path.join(data_dir, "image.tact")).astype(np.float64)
    membrane = io.read_tensor(os.path.join(data_dir, "membrane.tact")) > 0.5
    labels = io.read_tensor(os.path.join(data_dir, "labels.tact")).astype(np.int64)
    return image, membrane, labels
