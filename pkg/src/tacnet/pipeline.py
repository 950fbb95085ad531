"""Training protocol, inference, evaluation and ablation drivers."""

import time
from dataclasses import dataclass, replace

import numpy as np

from . import convlstm as cl
from ._parallel import ordered_map
from .attention import DEFAULT_BETA, DEFAULT_PATCH, build_operator, tile_starts
from .field import SLICE_COUNTS, threshold
from .metrics import (adapted_rand_index, betti_error, dice, label_regions,
                      remove_small_components, variation_of_information)
from .persistence import DEFAULT_EPSILON, DEFAULT_SIGMA

MODELS = ("convlstm", "sta", "ita")


class TrainingError(RuntimeError):
    def __init__(self, epoch, message="loss diverged"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 0.001
    lr_halving_period: int = 50
    epochs: int = 35
    batch: int = 15
    seed: int = 0
    slice_count: int = 3
    patch: int = DEFAULT_PATCH
    beta: float = DEFAULT_BETA
    sigma: float = DEFAULT_SIGMA
    epsilon: float = DEFAULT_EPSILON
    fine_tune_lr: float = 0.00001
    fine_tune_epochs: int = 15
    hidden: int = 8
    kernel: int = 3
    momentum: float = 0.0
    flip: bool = False
    sample_patch: int = 32
    train_fraction: float = 0.6
    level: float = 0.5
    min_component: int = 10
    betti_patch: int = 64
    betti_samples: int = 100
    include_beta0: bool = False

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.slice_count not in SLICE_COUNTS:
            raise ValueError(f"slice_count must be one of {SLICE_COUNTS}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    def lr_at(self, epoch):
        """Stage-1 learning rate: halved every ``lr_halving_period`` epochs."""
        return self.lr * 0.5 ** (epoch // self.lr_halving_period)


def split_centers(depth, train_fraction, margin=max(SLICE_COUNTS) // 2):
    """Train and test centre slices; windows of every slice count stay inside their split."""
    split = int(round(depth * train_fraction))
    train = list(range(margin, split - margin))
    test = list(range(split + margin, depth - margin))
    if not train or not test:
        raise ValueError(f"volume of depth {depth} too shallow to split")
    return train, test


def window(volume, center, slice_count):
    half = slice_count // 2
    idx = np.clip(np.arange(center - half, center + half + 1), 0, len(volume) - 1)
    return volume[idx]


def make_samples(image, membrane, centers, slice_count, sample_patch):
    """Fixed ``(S, l, p, p)`` crops so per-sample attention state stays aligned."""
    _, h, w = image.shape
    xs, ys = [], []
    for z in centers:
        xw = window(image, z, slice_count)
        yw = window(membrane, z, slice_count).astype(np.float64)
        for r in tile_starts(h, sample_patch):
            for c in tile_starts(w, sample_patch):
                xs.append(xw[:, r:r + sample_patch, c:c + sample_patch])
                ys.append(yw[:, r:r + sample_patch, c:c + sample_patch])
    return np.stack(xs), np.stack(ys)


def _flip(x, y, rng):
    if rng.uniform() < 0.5:
        x, y = x[..., ::-1], y[..., ::-1]
    if rng.uniform() < 0.5:
        x, y = x[..., ::-1, :], y[..., ::-1, :]
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def train(config, dataset, params=None, stage="backbone", attention=True, beta=None,
          kernels=None):
    """Run one training stage; returns ``(params, history)``.

    ``backbone`` trains from a seeded initialisation with the halving
    schedule. ``tacnet`` continues from ``params`` at ``fine_tune_lr`` with
    the attention head attached (or plain fine-tuning when ``attention`` is
    False). History rows are ``(epoch, stage, lr, loss)``.
    """
    xs, ys = dataset
    if len(xs) == 0:
        raise ValueError("dataset is empty")
    if stage == "backbone":
        if params is None:
            params = cl.init_params(config.hidden, config.kernel, config.seed)
        epochs, stage_id = config.epochs, 0
    elif stage == "tacnet":
        if params is None:
            raise ValueError("tacnet stage needs backbone parameters")
        epochs, stage_id = config.fine_tune_epochs, 1
    else:
        raise ValueError(f"unknown stage {stage!r}")
    params = params.copy()
    beta = config.beta if beta is None else beta
    use_att = stage == "tacnet" and attention
    rng = np.random.default_rng([config.seed, stage_id])
    velocity = cl.zeros_like(params)
    o_prev = {}
    history = []
    center = xs.shape[1] // 2
    for epoch in range(epochs):
        lr = config.lr_at(epoch) if stage_id == 0 else config.fine_tune_lr
        order = rng.permutation(len(xs))
        losses = []
        for start in range(0, len(order), config.batch):
            idx = order[start:start + config.batch]
            xb, yb = xs[idx], ys[idx]
            if config.flip:
                pairs = [_flip(x, y, rng) for x, y in zip(xb, yb)]
                xb = np.stack([p[0] for p in pairs])
                yb = np.stack([p[1] for p in pairs])
            att = None
            if use_att:
                probs = cl.forward(params, xb)
                ops = [build_operator(p, center, min(config.patch, p.shape[-1]),
                                      config.epsilon, config.sigma, kernels) for p in probs]
                att = cl.AttentionInputs(ops, [o_prev.get(int(i)) for i in idx], beta, center)
            loss, grads = cl.loss_and_grads(params, xb, yb, att)
            if not np.isfinite(loss):
                raise TrainingError(epoch)
            if use_att:
                for i, o in zip(idx, att.outputs):
                    o_prev[int(i)] = o
            for name in cl.PARAM_NAMES:
                v = getattr(velocity, name)
                v *= config.momentum
                v -= lr * getattr(grads, name)
                setattr(params, name, getattr(params, name) + v)
            losses.append(loss * len(idx))
        history.append((epoch, stage, lr, float(np.sum(losses) / len(xs))))
    return params, history


def predict_slice(params, image, center, config, attention=True, kernels=None):
    """Returns ``(p, o, p_hat, cp_maps)`` for one centre slice of a volume."""
    x = window(image, center, config.slice_count)
    probs = cl.forward(params, x)
    c = config.slice_count // 2
    p = probs[c]
    if not attention:
        return p, None, p, None
    patch = min(config.patch, *p.shape)
    op = build_operator(probs, c, patch, config.epsilon, config.sigma, kernels)
    o = op.apply(p)
    p_hat = np.clip(float(params.attention_weight) * o + p, 0.0, 1.0)
    return p, o, p_hat, op


def predict_volume(params, image, centers, config, attention=True, kernels=None):
    return np.stack(ordered_map(
        lambda z: predict_slice(params, image, z, config, attention, kernels)[2], centers))


def slice_metrics(pred_prob, gt_mask, config, seed=0):
    pred = remove_small_components(threshold(pred_prob, config.level), config.min_component)
    return slice_metrics_masks(pred, gt_mask, config, seed)


def slice_metrics_masks(pred, gt, config, seed=0):
    lp, lg = label_regions(pred), label_regions(gt)
    patch = min(config.betti_patch, *gt.shape)
    return {
        "dice": dice(pred, gt),
        "ari": adapted_rand_index(lp, lg),
        "voi": variation_of_information(lp, lg),
        "betti_error": betti_error(pred, gt, patch, config.betti_samples, seed,
                                   config.include_beta0),
    }


METRIC_NAMES = ("dice", "ari", "voi", "betti_error")


def evaluate(pred_volume, gt_volume, config, seed=0):
    """Per-slice metrics aggregated as ``{metric: (mean, std)}``."""
    pred_volume = np.asarray(pred_volume)
    gt_volume = np.asarray(gt_volume)
    if pred_volume.shape != gt_volume.shape:
        raise ValueError(f"shape mismatch {pred_volume.shape} vs {gt_volume.shape}")
    rows = ordered_map(
        lambda z: slice_metrics(pred_volume[z], gt_volume[z], config, seed + z),
        range(len(pred_volume)))
    return {m: (float(np.mean([r[m] for r in rows])), float(np.std([r[m] for r in rows])))
            for m in METRIC_NAMES}


def run_ablation(config, image, membrane, slice_counts=SLICE_COUNTS, kernels=None):
    """Train and evaluate {ConvLSTM, +STA, +STA+ITA} for each slice count.

    The ConvLSTM row is the stage-1 backbone. Both attention rows continue
    from it for ``fine_tune_epochs``: STA with ``beta = 0``, STA+ITA with
    ``config.beta``. Returns ``(rows, timings)``.
    """
    train_c, test_c = split_centers(len(image), config.train_fraction)
    gt = membrane[test_c]
    rows, timings = [], []
    for l in slice_counts:
        cfg = replace(config, slice_count=l)
        data = make_samples(image, membrane, train_c, l, cfg.sample_patch)
        t0 = time.perf_counter()
        backbone, _ = train(cfg, data, stage="backbone", kernels=kernels)
        per_epoch = {"convlstm": (time.perf_counter() - t0) / cfg.epochs}
        models = {"convlstm": backbone}
        for model, beta in (("sta", 0.0), ("ita", cfg.beta)):
            t0 = time.perf_counter()
            models[model], _ = train(cfg, data, backbone, stage="tacnet", beta=beta,
                                     kernels=kernels)
            per_epoch[model] = (time.perf_counter() - t0) / max(cfg.fine_tune_epochs, 1)
        for model in MODELS:
            pred = predict_volume(models[model], image, test_c, cfg,
                                  attention=(model != "convlstm"), kernels=kernels)
            rows.append({"model": model, "slices": l, **evaluate(pred, gt, cfg, seed=cfg.seed)})
            timings.append({"model": model, "slices": l,
                            "seconds_per_epoch": per_epoch[model]})
    return rows, timings


def params_to_tensors(params, config=None):
    tensors = dict(params.as_dict())
    if config is not None:
        tensors["meta.patch"] = np.array(float(config.patch))
        tensors["meta.slice_count"] = np.array(float(config.slice_count))
    return tensors


def params_from_tensors(tensors):
    return cl.ConvLSTMParams(**{n: np.asarray(tensors[n], dtype=np.float64)
                                for n in cl.PARAM_NAMES})
