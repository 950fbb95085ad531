"""Single-layer ConvLSTM over slice sequences, with exact reverse-mode gradients.

Inputs are ``(B, l, H, W)`` (or ``(l, H, W)``) intensity stacks. Each slice
is one time step; the network emits one probability map per slice. Gate
order in the stacked kernels is i, f, o, g.
"""

from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .attention import StructureError

PARAM_NAMES = ("wx", "wh", "b", "head_w", "head_b", "attention_weight")
PROB_CLAMP = 1e-7


@dataclass
class ConvLSTMParams:
    wx: np.ndarray      # (4*Hc, 1, k, k)
    wh: np.ndarray      # (4*Hc, Hc, k, k)
    b: np.ndarray       # (4*Hc,)
    head_w: np.ndarray  # (Hc,)
    head_b: np.ndarray  # ()
    attention_weight: np.ndarray  # ()

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                raise StructureError(f"parameter {f.name} is uninitialized")
            setattr(self, f.name, np.asarray(v, dtype=np.float64))
        hc4, cin, k, k2 = self.wx.shape
        if cin != 1 or k != k2 or k % 2 == 0 or hc4 % 4:
            raise StructureError(f"bad input kernel shape {self.wx.shape}")
        hc = hc4 // 4
        if self.wh.shape != (hc4, hc, k, k) or self.b.shape != (hc4,) \
                or self.head_w.shape != (hc,) or self.head_b.shape != () \
                or self.attention_weight.shape != ():
            raise StructureError("inconsistent parameter shapes")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in PARAM_NAMES):
            raise StructureError("parameters must be finite")

    @property
    def hidden(self):
        return self.head_w.shape[0]

    @property
    def kernel(self):
        return self.wx.shape[-1]

    def as_dict(self):
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self):
        return ConvLSTMParams(**{n: v.copy() for n, v in self.as_dict().items()})


def init_params(hidden=8, kernel=3, seed=0, forget_bias=1.0):
    """Glorot-uniform gate kernels, zero biases except the forget gate."""
    if kernel % 2 == 0:
        raise StructureError("kernel size must be odd")
    rng = np.random.default_rng(seed)

    def glorot(cout, cin):
        bound = np.sqrt(6.0 / ((cin + cout) * kernel * kernel))
        return rng.uniform(-bound, bound, size=(cout, cin, kernel, kernel))

    wx = np.concatenate([glorot(hidden, 1) for _ in range(4)])
    wh = np.concatenate([glorot(hidden, hidden) for _ in range(4)])
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = forget_bias
    bound = np.sqrt(6.0 / (hidden + 1))
    head_w = rng.uniform(-bound, bound, size=hidden)
    return ConvLSTMParams(wx, wh, b, head_w, np.array(0.0), np.array(0.0))


def zeros_like(params):
    return ConvLSTMParams(**{n: np.zeros_like(v) for n, v in params.as_dict().items()})


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _windows(x, k):
    r = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    return sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)


def im2col(x, k):
    """``(B, C, H, W)`` -> ``(B*H*W, C*k*k)`` patch matrix of a same-padded conv."""
    b, c, h, w = x.shape
    return _windows(x, k).transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)


def conv2d(x, w, cols=None):
    """Same-padded cross-correlation, ``x`` (B, C, H, W), ``w`` (O, C, k, k)."""
    b, _, h, wd = x.shape
    if cols is None:
        cols = im2col(x, w.shape[-1])
    out = cols @ w.reshape(w.shape[0], -1).T
    return out.reshape(b, h, wd, -1).transpose(0, 3, 1, 2)


def conv2d_grad_input(w, gout):
    """Gradient of ``conv2d(x, w)`` w.r.t. ``x`` (col2im of the patch gradients)."""
    b, o, h, wd = gout.shape
    _, c, k, _ = w.shape
    r = k // 2
    g = gout.transpose(0, 2, 3, 1).reshape(-1, o)
    dcols = (g @ w.reshape(o, -1)).reshape(b, h, wd, c, k, k)
    gxp = np.zeros((b, c, h + 2 * r, wd + 2 * r))
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + h, j:j + wd] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return gxp[:, :, r:r + h, r:r + wd]


def conv2d_grad_weight(gout, cols, shape):
    g = gout.transpose(0, 2, 3, 1).reshape(-1, gout.shape[1])
    return (g.T @ cols).reshape(shape)


def _batched(stack):
    x = np.asarray(stack, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise StructureError(f"expected (l, H, W) or (B, l, H, W), got {x.shape}")
    return x, False


def forward(params, stack, return_cache=False):
    """Probability map per slice, same shape as ``stack``."""
    if params is None:
        raise StructureError("parameters are uninitialized")
    x, single = _batched(stack)
    bsz, steps, h, w = x.shape
    hc = params.hidden
    weight = np.concatenate([params.wx, params.wh], axis=1)
    hid = np.zeros((bsz, hc, h, w))
    cell = np.zeros((bsz, hc, h, w))
    probs = np.empty_like(x)
    cache = []
    for t in range(steps):
        u = np.concatenate([x[:, t:t + 1], hid], axis=1)
        cols = im2col(u, params.kernel)
        z = conv2d(u, weight, cols) + params.b[None, :, None, None]
        gi = sigmoid(z[:, :hc])
        gf = sigmoid(z[:, hc:2 * hc])
        go = sigmoid(z[:, 2 * hc:3 * hc])
        gg = np.tanh(z[:, 3 * hc:])
        c_prev = cell
        cell = gf * c_prev + gi * gg
        tc = np.tanh(cell)
        hid = go * tc
        logit = np.tensordot(params.head_w, hid, axes=([0], [1])) + params.head_b
        probs[:, t] = sigmoid(logit)
        if return_cache:
            cache.append((u, cols, gi, gf, go, gg, c_prev, tc, hid))
    out = probs[0] if single else probs
    if return_cache:
        return out, cache
    return out


def backward_from_probs(params, cache, probs, grad_probs):
    """Reverse-mode pass given dL/dprobs of shape ``(B, l, H, W)``."""
    grads = zeros_like(params)
    hc = params.hidden
    weight = np.concatenate([params.wx, params.wh], axis=1)
    gweight = np.zeros_like(weight)
    steps = probs.shape[1]
    dh_next = 0.0
    dc_next = 0.0
    for t in reversed(range(steps)):
        u, cols, gi, gf, go, gg, c_prev, tc, hid = cache[t]
        p = probs[:, t]
        dlogit = grad_probs[:, t] * p * (1.0 - p)
        grads.head_w += np.tensordot(dlogit, hid, axes=([0, 1, 2], [0, 2, 3]))
        grads.head_b += dlogit.sum()
        dh = dlogit[:, None] * params.head_w[None, :, None, None] + dh_next
        dc = dh * go * (1.0 - tc * tc) + dc_next
        dz = np.concatenate([
            dc * gg * gi * (1.0 - gi),
            dc * c_prev * gf * (1.0 - gf),
            dh * tc * go * (1.0 - go),
            dc * gi * (1.0 - gg * gg),
        ], axis=1)
        dc_next = dc * gf
        grads.b += dz.sum(axis=(0, 2, 3))
        gweight += conv2d_grad_weight(dz, cols, weight.shape)
        if t:
            dh_next = conv2d_grad_input(weight, dz)[:, 1:]
    grads.wx = gweight[:, :1].copy()
    grads.wh = gweight[:, 1:].copy()
    return grads


def bce_loss(preds, gts):
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(gts, dtype=np.float64)
    if p.shape != y.shape:
        raise StructureError(f"shape mismatch {p.shape} vs {y.shape}")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def bce_grad(preds, gts):
    """dL/dpreds of :func:`bce_loss`; zero where the clamp is active."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(gts, dtype=np.float64)
    inside = (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    g = (-y / pc + (1.0 - y) / (1.0 - pc)) / p.size
    return np.where(inside, g, 0.0)


@dataclass
class AttentionInputs:
    """Per-sample constants for the attention-augmented loss."""

    operators: list          # one AttentionOperator per batch element
    o_prev: list             # previous-epoch output per element, or None
    beta: float = 0.0
    center: int | None = None
    outputs: list | None = None  # ITA outputs of the last pass, filled in by the loss


def tacnet_outputs(params, stack, att, return_cache=False):
    """Backbone outputs with the focused slice replaced by the attended map.

    Returns ``(outputs, o_blend, extras)`` where ``o_blend`` is the ITA
    output per batch element.
    """
    x, single = _batched(stack)
    probs, cache = forward(params, x, return_cache=True)
    center = x.shape[1] // 2 if att.center is None else att.center
    alpha = float(params.attention_weight)
    outs = probs.copy()
    blends, pre_clip = [], []
    for bi, op in enumerate(att.operators):
        p = probs[bi, center]
        o = op.apply(p)
        if att.o_prev[bi] is not None:
            o = att.beta * att.o_prev[bi] + (1.0 - att.beta) * o
        blends.append(o)
        z = alpha * o + p
        pre_clip.append(z)
        outs[bi, center] = np.clip(z, 0.0, 1.0)
    extras = (probs, cache, center, blends, pre_clip)
    if single:
        outs = outs[0]
    if return_cache:
        return outs, blends, extras
    return outs, blends


def loss_and_grads(params, stack, gts, att=None):
    """BCE loss and exact gradients; with ``att`` the attention head is attached."""
    x, _ = _batched(stack)
    y, _ = _batched(gts)
    if x.shape != y.shape:
        raise StructureError(f"shape mismatch {x.shape} vs {y.shape}")
    if att is None:
        probs, cache = forward(params, x, return_cache=True)
        loss = bce_loss(probs, y)
        return loss, backward_from_probs(params, cache, probs, bce_grad(probs, y))
    outs, blends, (probs, cache, center, _, pre_clip) = tacnet_outputs(
        params, x, att, return_cache=True)
    att.outputs = blends
    loss = bce_loss(outs, y)
    g_out = bce_grad(outs, y)
    g_probs = g_out.copy()
    alpha = float(params.attention_weight)
    g_alpha = 0.0
    for bi, op in enumerate(att.operators):
        z = pre_clip[bi]
        gz = np.where((z >= 0.0) & (z <= 1.0), g_out[bi, center], 0.0)
        g_alpha += float(np.sum(gz * blends[bi]))
        keep = 1.0 - att.beta if att.o_prev[bi] is not None else 1.0
        g_probs[bi, center] = gz + alpha * keep * op.adjoint(gz)
    grads = backward_from_probs(params, cache, probs, g_probs)
    grads.attention_weight = np.array(g_alpha)
    return loss, grads


def loss_value(params, stack, gts, att=None):
    x, _ = _batched(stack)
    y, _ = _batched(gts)
    if att is None:
        return bce_loss(forward(params, x), y)
    return bce_loss(tacnet_outputs(params, x, att)[0], y)
