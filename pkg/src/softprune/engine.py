"""A small reverse-mode engine for Conv-BN-ReLU networks with input-channel masks.

Everything is float64 numpy.  Layers cache what they need during ``forward``
and fill parameter gradients during ``backward``.  Convolutions are stride 1
with "same" zero padding; kernels are odd (1 or 3 in practice).

Masking follows the soft-mask scheme: a convolution computes with
``W * m`` (mask broadcast over output channels and kernel taps) but the
dense weight receives the gradient of the masked weight unchanged, so pruned
input channels keep learning and can be restored later.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateBatch, ShapeMismatch, StaleGradient

__all__ = [
    "Param",
    "MaskedConv",
    "BatchNorm",
    "ReLU",
    "GlobalAvgPool",
    "Linear",
    "softmax_cross_entropy",
    "ChainNet",
    "SkipNet",
    "taylor_importance",
    "bn_taylor_residual",
    "gradient_probe",
    "finite_difference_errors",
    "masked_as_dense",
]


@dataclass
class Param:
    data: np.ndarray
    grad: np.ndarray = None
    name: str = ""

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


class MaskedConv:
    def __init__(self, c_in: int, c_out: int, kernel: int = 3, rng=None, name: str = "conv"):
        if kernel % 2 != 1:
            raise ValueError("only odd kernels are supported")
        rng = np.random.default_rng(rng)
        scale = np.sqrt(2.0 / (c_in * kernel * kernel))
        self.weight = Param(rng.normal(0.0, scale, (c_out, c_in, kernel, kernel)), name=f"{name}.weight")
        self.mask = np.ones(c_in)
        self.kernel = kernel
        self.name = name
        self._cache = None
        self._fresh = False

    @property
    def c_in(self) -> int:
        return self.weight.data.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.data.shape[0]

    def effective_weight(self) -> np.ndarray:
        return self.weight.data * self.mask[None, :, None, None]

    def set_mask(self, mask) -> None:
        mask = np.asarray(mask, dtype=np.float64).reshape(-1)
        if mask.size != self.c_in:
            raise ShapeMismatch(f"{self.name}: mask of length {mask.size} for {self.c_in} inputs")
        self.mask = mask

    def apply_mask_permanently(self) -> None:
        self.weight.data = self.effective_weight()

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeMismatch(f"{self.name}: input shape {x.shape}, expected (N, {self.c_in}, H, W)")
        p = self.kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = sliding_window_view(xp, (self.kernel, self.kernel), axis=(2, 3))
        w_eff = self.effective_weight()
        out = np.tensordot(windows, w_eff, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        self._cache = (x.shape, windows, w_eff)
        self._fresh = False
        return np.ascontiguousarray(out)

    def backward(self, g: np.ndarray) -> np.ndarray:
        shape, windows, w_eff = self._cache
        # straight-through: the dense weight takes the masked weight's gradient
        self.weight.grad = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        n, c, h, w = shape
        k = self.kernel
        gxp = np.zeros((n, c, h + k - 1, w + k - 1))
        for r in range(k):
            for s in range(k):
                # the input gradient still sees the mask
                gxp[:, :, r : r + h, s : s + w] += np.tensordot(g, w_eff[:, :, r, s], axes=([1], [0])).transpose(0, 3, 1, 2)
        self._fresh = True
        p = k // 2
        return gxp[:, :, p : p + h, p : p + w]

    def params(self):
        return [self.weight]


class BatchNorm:
    """Training-mode batch normalization with a scaled weight.

    The network uses ``gamma = gamma_orig * scale``; ``gamma_orig`` is the
    trained parameter and ``scale`` is set from a channel mask.  A channel
    with zero batch variance and ``eps = 0`` normalizes to 0; its input
    gradient is then infinite unless its effective weight is 0.
    """

    def __init__(self, channels: int, eps: float = 1e-5, rng=None, name: str = "bn", momentum: float = 0.1):
        rng = np.random.default_rng(rng)
        self.gamma_orig = Param(np.ones(channels), name=f"{name}.gamma")
        self.beta = Param(np.zeros(channels), name=f"{name}.beta")
        self.scale = 1.0
        self.eps = eps
        self.name = name
        self.momentum = momentum
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.gamma_grad = None
        self._cache = None

    @property
    def gamma(self) -> np.ndarray:
        return self.gamma_orig.data * self.scale

    def rescale(self, mask) -> float:
        """Set the weight scale to the kept fraction of ``mask``."""
        mask = np.asarray(mask, dtype=np.float64).reshape(-1)
        self.scale = float(mask.sum() / mask.size)
        return self.scale

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        count = n * h * w
        if count <= 1:
            raise DegenerateBatch(f"{self.name}: batch statistics need more than one value per channel")
        mean = x.mean(axis=(0, 2, 3))
        centered = x - mean[None, :, None, None]
        var = (centered**2).mean(axis=(0, 2, 3))
        sigma = np.sqrt(var + self.eps)
        zhat = np.divide(
            centered, sigma[None, :, None, None], out=np.zeros_like(centered), where=sigma[None, :, None, None] > 0
        )
        self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
        self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var * count / (count - 1)
        gamma = self.gamma
        self._cache = (zhat, sigma, gamma, count)
        return gamma[None, :, None, None] * zhat + self.beta.data[None, :, None, None]

    def backward(self, g: np.ndarray) -> np.ndarray:
        zhat, sigma, gamma, count = self._cache
        g_gamma = (g * zhat).sum(axis=(0, 2, 3))
        g_beta = g.sum(axis=(0, 2, 3))
        self.gamma_grad = g_gamma
        self.gamma_orig.grad = g_gamma * self.scale
        self.beta.grad = g_beta
        with np.errstate(divide="ignore", invalid="ignore"):
            # gamma == 0 makes the output constant in x: zero gradient even at sigma == 0
            coef = np.where(gamma == 0, 0.0, gamma / sigma)
            inner = g - (g_beta / count)[None, :, None, None] - zhat * (g_gamma / count)[None, :, None, None]
            return coef[None, :, None, None] * inner

    def params(self):
        return [self.gamma_orig, self.beta]


class ReLU:
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, g):
        return np.where(self._mask, g, 0.0)


class GlobalAvgPool:
    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, g):
        n, c, h, w = self._shape
        return np.broadcast_to(g[:, :, None, None] / (h * w), self._shape).copy()


class Linear:
    def __init__(self, d_in: int, d_out: int, rng=None, name: str = "fc"):
        rng = np.random.default_rng(rng)
        self.weight = Param(rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_out, d_in)), name=f"{name}.weight")
        self.bias = Param(np.zeros(d_out), name=f"{name}.bias")

    def forward(self, x):
        self._x = x
        return x @ self.weight.data.T + self.bias.data

    def backward(self, g):
        self.weight.grad = g.T @ self._x
        self.bias.grad = g.sum(axis=0)
        return g @ self.weight.data

    def params(self):
        return [self.weight, self.bias]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


class _Net:
    """Shared plumbing: loss evaluation and parameter listing."""

    def params(self):
        return [p for layer in self.layers() for p in layer.params()]

    def loss(self, x, labels) -> float:
        return self.forward(x, labels)

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


class ChainNet(_Net):
    """``[conv -> bn -> relu] * L -> global average pool -> linear``."""

    def __init__(self, widths, n_classes: int = 4, kernel=3, rng=None, eps: float = 1e-5):
        rng = np.random.default_rng(rng)
        kernels = kernel if isinstance(kernel, (list, tuple)) else [kernel] * (len(widths) - 1)
        self.convs = []
        self.bns = []
        for k in range(len(widths) - 1):
            self.convs.append(MaskedConv(widths[k], widths[k + 1], kernels[k], rng, name=f"conv{k + 1}"))
            bn = BatchNorm(widths[k + 1], eps=eps, name=f"bn{k + 1}")
            bn.gamma_orig.data = rng.uniform(0.5, 1.5, widths[k + 1])
            bn.beta.data = rng.normal(0.0, 0.5, widths[k + 1])
            self.bns.append(bn)
        self.relus = [ReLU() for _ in self.convs]
        self.pool = GlobalAvgPool()
        self.head = Linear(widths[-1], n_classes, rng)

    def layers(self):
        return [*self.convs, *self.bns, self.head]

    def forward(self, x, labels) -> float:
        h = x
        for conv, bn, relu in zip(self.convs, self.bns, self.relus):
            h = relu.forward(bn.forward(conv.forward(h)))
        logits = self.head.forward(self.pool.forward(h))
        self.logits = logits
        loss, self._glogits = softmax_cross_entropy(logits, labels)
        return loss

    def backward(self) -> np.ndarray:
        g = self.pool.backward(self.head.backward(self._glogits))
        for conv, bn, relu in reversed(list(zip(self.convs, self.bns, self.relus))):
            g = conv.backward(bn.backward(relu.backward(g)))
        return g


class SkipNet(_Net):
    """Two Conv-BN branches summed before a ReLU that feeds two consumers.

    ``x -> (conv_a -> bn_a) + (conv_b -> bn_b) -> relu -> {conv_c -> bn_c, conv_d -> bn_d}``,
    each consumer followed by a ReLU; both are pooled and concatenated for
    the linear head.
    """

    def __init__(self, c_in=3, width=6, c_out=5, n_classes=3, rng=None, eps: float = 1e-5):
        rng = np.random.default_rng(rng)
        self.branches = [MaskedConv(c_in, width, 3, rng, "conv_a"), MaskedConv(c_in, width, 1, rng, "conv_b")]
        self.branch_bns = [BatchNorm(width, eps, name="bn_a"), BatchNorm(width, eps, name="bn_b")]
        self.consumers = [MaskedConv(width, c_out, 3, rng, "conv_c"), MaskedConv(width, c_out, 1, rng, "conv_d")]
        self.consumer_bns = [BatchNorm(c_out, eps, name="bn_c"), BatchNorm(c_out, eps, name="bn_d")]
        for bn in (*self.branch_bns, *self.consumer_bns):
            bn.gamma_orig.data = rng.uniform(0.5, 1.5, bn.beta.data.size)
            bn.beta.data = rng.normal(0.0, 0.5, bn.beta.data.size)
        self.relu = ReLU()
        self.out_relus = [ReLU(), ReLU()]
        self.pools = [GlobalAvgPool(), GlobalAvgPool()]
        self.head = Linear(2 * c_out, n_classes, rng)

    def layers(self):
        return [*self.branches, *self.branch_bns, *self.consumers, *self.consumer_bns, self.head]

    def forward(self, x, labels) -> float:
        z = sum(bn.forward(conv.forward(x)) for conv, bn in zip(self.branches, self.branch_bns))
        h = self.relu.forward(z)
        pooled = [
            pool.forward(relu.forward(bn.forward(conv.forward(h))))
            for conv, bn, relu, pool in zip(self.consumers, self.consumer_bns, self.out_relus, self.pools)
        ]
        logits = self.head.forward(np.concatenate(pooled, axis=1))
        loss, self._glogits = softmax_cross_entropy(logits, labels)
        return loss

    def backward(self) -> np.ndarray:
        g = self.head.backward(self._glogits)
        split = np.split(g, 2, axis=1)
        gh = 0.0
        for gp, conv, bn, relu, pool in zip(split, self.consumers, self.consumer_bns, self.out_relus, self.pools):
            gh = gh + conv.backward(bn.backward(relu.backward(pool.backward(gp))))
        gz = self.relu.backward(gh)
        return sum(conv.backward(bn.backward(gz)) for conv, bn in zip(self.branches, self.branch_bns))


# ---------------------------------------------------------------------------
# importance and identities
# ---------------------------------------------------------------------------


def taylor_importance(conv: MaskedConv) -> np.ndarray:
    """``|sum_{o,r,s} W[o,i,r,s] * g_W[o,i,r,s]|`` per input channel, dense ``W``."""
    if conv.weight.grad is None or not conv._fresh:
        raise StaleGradient(f"{conv.name}: run backward before computing importance")
    return np.abs((conv.weight.data * conv.weight.grad).sum(axis=(0, 2, 3)))


def _signed_taylor(conv: MaskedConv) -> np.ndarray:
    return (conv.weight.data * conv.weight.grad).sum(axis=(0, 2, 3))


def bn_taylor_residual(bns, consumers) -> tuple[float, float]:
    """Compare BN-side and conv-side first-order Taylor terms per channel.

    Returns ``(max_abs_residual, scale)`` where the BN side is
    ``sum_k gamma_k * g_gamma_k + beta_k * g_beta_k`` over the BN layers whose
    outputs are summed into a channel and the conv side is
    ``sum_j sum_{o,r,s} W_j * g_W_j`` over its consumers.  ``scale`` is the
    largest magnitude among the terms.
    """
    bns = bns if isinstance(bns, (list, tuple)) else [bns]
    consumers = consumers if isinstance(consumers, (list, tuple)) else [consumers]
    lhs = sum(bn.gamma * bn.gamma_grad + bn.beta.data * bn.beta.grad for bn in bns)
    rhs = sum(_signed_taylor(conv) for conv in consumers)
    scale = float(max(np.abs(lhs).max(), np.abs(rhs).max()))
    return float(np.abs(lhs - rhs).max()), scale


def gradient_probe(alpha: float, seed: int = 0, eps: float = 1e-5, c_in: int = 16, c_out: int = 8,
                   batch: int = 8, hw: int = 6) -> dict:
    """Gradient magnitudes behind a Conv-BN pair after masking inputs.

    A random fraction ``1 - alpha`` of the conv's input channels is masked
    and the loss is linear in the BN output, so the upstream gradient is
    fixed.  Reports the mean ``|dL/dz|`` (``z`` the conv output) and the mean
    dense-weight gradient over kept input channels, without and with the BN
    weight scaled by the kept fraction, plus the unmasked reference.
    """
    rng = np.random.default_rng(seed)
    conv = MaskedConv(c_in, c_out, 3, rng, "probe_conv")
    bn = BatchNorm(c_out, eps=eps, name="probe_bn")
    bn.gamma_orig.data = rng.uniform(0.5, 1.5, c_out)
    bn.beta.data = rng.normal(0.0, 0.5, c_out)
    x = rng.normal(size=(batch, c_in, hw, hw))
    upstream = rng.normal(size=(batch, c_out, hw, hw))
    kept = int(round(alpha * c_in))
    mask = np.zeros(c_in)
    mask[rng.permutation(c_in)[:kept]] = 1.0

    def run(m, scaled):
        conv.set_mask(m)
        bn.scale = 1.0
        if scaled:
            bn.rescale(m)
        with np.errstate(all="ignore"):
            bn.forward(conv.forward(x))
            gz = bn.backward(upstream)
            conv.backward(gz)
        keep = m > 0
        gw = np.abs(conv.weight.grad[:, keep]).mean() if keep.any() else 0.0
        return float(np.abs(gz).mean()), float(gw), bool(np.all(np.isfinite(gz)) and np.all(np.isfinite(conv.weight.grad)))

    dense = run(np.ones(c_in), False)
    plain = run(mask, False)
    scaled = run(mask, True)
    return {
        "alpha": alpha,
        "kept": kept,
        "dense_gz": dense[0],
        "unscaled_gz": plain[0],
        "scaled_gz": scaled[0],
        "unscaled_gw_kept": plain[1],
        "scaled_gw_kept": scaled[1],
        "unscaled_finite": plain[2],
        "scaled_finite": scaled[2],
    }


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def masked_as_dense(conv: MaskedConv) -> MaskedConv:
    """A copy computing the same function with the mask folded into the weights."""
    twin = MaskedConv.__new__(MaskedConv)
    twin.__dict__.update(conv.__dict__)
    twin.weight = Param(conv.effective_weight(), name=conv.weight.name)
    twin.mask = np.ones(conv.c_in)
    twin._cache = None
    twin._fresh = False
    return twin


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def finite_difference_errors(net, x: np.ndarray, labels: np.ndarray, h: float = 1e-5) -> dict:
    """Relative error of every analytic gradient against central differences.

    Returns ``{name: rel_err}`` for all parameters and the input (key
    ``"input"``).  Masks must be all ones; use :func:`masked_as_dense` to
    check masked layers through their effective weights.
    """
    net.forward(x, labels)
    gx = net.backward()
    analytic = {p.name: p.grad.copy() for p in net.params()}
    errors = {}
    for p in net.params():
        numeric = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = net.forward(x, labels)
            p.data[idx] = orig - h
            down = net.forward(x, labels)
            p.data[idx] = orig
            numeric[idx] = (up - down) / (2 * h)
        errors[p.name] = _rel_err(analytic[p.name], numeric)
    numeric = np.zeros_like(x)
    xx = x.copy()
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xx[idx] = x[idx] + h
        up = net.forward(xx, labels)
        xx[idx] = x[idx] - h
        down = net.forward(xx, labels)
        xx[idx] = x[idx]
        numeric[idx] = (up - down) / (2 * h)
    errors["input"] = _rel_err(gx, numeric)
    net.forward(x, labels)
    net.backward()
    return errors
