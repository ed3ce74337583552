"""E1D3 U-Net and its ablation variants.

One encoder produces a feature tuple ``z = (z_1, ..., z_L)``; each decoder
consumes the whole tuple through skip connections and ends in a 1x1x1
convolution plus channel softmax. Variants:

``E1D3``
    three decoders, one binary (2-class) head per region, ordered WT, TC, EN.
``E1D3Ens``
    three decoders with 4-class heads; averaged at inference.
``E1D1``
    the plain U-Net: one decoder, one 4-class head.
``E1D1Wide``
    E1D1 with widths scaled up to match the E1D3 parameter count.

4-class heads use channel order (background, NEC, PTE, ENC), i.e. labels
(0, 1, 2, 4).
"""
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import layers
from .errors import InvalidSpec, ShapeMismatch

VARIANTS = ("E1D1", "E1D3", "E1D1Wide", "E1D3Ens")
REGIONS = ("wt", "tc", "en")
CLASS_LABELS = (0, 1, 2, 4)


@dataclass(frozen=True)
class NetworkSpec:
    variant: str = "E1D3"
    levels: int = 5
    base_width: int = 32
    width_cap: int = 320
    in_channels: int = 4
    head_classes: int | None = None
    kernel: int = 3
    negative_slope: float = 0.01
    # E1D1Wide only; None means "solve for the E1D3 parameter count"
    width_multiplier: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidSpec(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.levels < 2:
            raise InvalidSpec("levels must be >= 2")
        if self.base_width < 1 or self.width_cap < 1 or self.in_channels < 1:
            raise InvalidSpec("widths and in_channels must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidSpec(f"kernel must be odd and positive, got {self.kernel}")
        if self.head_classes is None:
            object.__setattr__(self, "head_classes", 2 if self.variant == "E1D3" else 4)
        expected = 2 if self.variant == "E1D3" else 4
        if self.head_classes != expected:
            raise InvalidSpec(f"{self.variant} heads have {expected} classes, got {self.head_classes}")
        if self.width_multiplier is not None and self.width_multiplier <= 0:
            raise InvalidSpec("width_multiplier must be positive")

    @property
    def decoder_names(self):
        return REGIONS if self.variant in ("E1D3", "E1D3Ens") else ("main",)

    @property
    def divisor(self):
        return 2 ** (self.levels - 1)

    def base_widths(self):
        return [min(self.base_width * 2 ** (lvl - 1), self.width_cap) for lvl in range(1, self.levels + 1)]

    def widths(self):
        base = self.base_widths()
        if self.variant != "E1D1Wide":
            return base
        alpha = self.width_multiplier
        if alpha is None:
            alpha = wide_multiplier(self)
        return [max(1, int(round(alpha * w))) for w in base]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def layer_shapes(spec):
    """Ordered ``(name, kind, stride, weight_shape)`` for every learnable layer."""
    w = spec.widths()
    k = spec.kernel
    out = []
    cin = spec.in_channels
    for lvl in range(1, spec.levels + 1):
        c = w[lvl - 1]
        out.append((f"enc{lvl}.conv1", "conv", 1 if lvl == 1 else 2, (c, cin, k, k, k)))
        out.append((f"enc{lvl}.conv2", "conv", 1, (c, c, k, k, k)))
        cin = c
    for dec in spec.decoder_names:
        for lvl in range(spec.levels - 1, 0, -1):
            c, below = w[lvl - 1], w[lvl]
            out.append((f"{dec}.up{lvl}", "convT", 2, (below, c, 2, 2, 2)))
            out.append((f"{dec}.conv{lvl}a", "conv", 1, (c, 2 * c, k, k, k)))
            out.append((f"{dec}.conv{lvl}b", "conv", 1, (c, c, k, k, k)))
        out.append((f"{dec}.head", "conv", 1, (spec.head_classes, w[0], 1, 1, 1)))
    return out


def _bias_size(kind, shape):
    return shape[1] if kind == "convT" else shape[0]


def count_parameters(spec):
    return sum(int(np.prod(s)) + _bias_size(kind, s) for _, kind, _, s in layer_shapes(spec))


def wide_multiplier(spec):
    """Width multiplier making E1D1Wide match the E1D3 parameter count.

    Scans multipliers on a 1e-3 grid; the first minimiser wins, so the
    result is deterministic.
    """
    target = count_parameters(replace(spec, variant="E1D3", head_classes=None, width_multiplier=None))
    best, best_err = 1.0, None
    for alpha in np.arange(1.0, 4.0, 1e-3):
        trial = replace(spec, width_multiplier=float(alpha))
        err = abs(count_parameters(trial) - target)
        if best_err is None or err < best_err:
            best, best_err = float(alpha), err
    return round(best, 3)


@dataclass
class NetworkState:
    """Learnable parameters (``<layer>.w`` / ``<layer>.b``) and their gradients."""

    params: dict
    grads: dict
    rng_seed: int = 0

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self):
        return NetworkState(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.grads.items()},
            self.rng_seed,
        )

    @property
    def num_parameters(self):
        return sum(v.size for v in self.params.values())


def build_network(spec, seed=0):
    """He-normal initialised state for ``spec``; biases start at zero."""
    if not isinstance(spec, NetworkSpec):
        raise InvalidSpec("build_network expects a NetworkSpec")
    rng = np.random.default_rng(seed)
    params = {}
    for name, kind, stride, shape in layer_shapes(spec):
        if kind == "convT":
            # each output voxel of a k=s transpose conv sees in_channels terms
            fan_in = shape[0] * int(np.prod(shape[2:])) // stride**3
        else:
            fan_in = int(np.prod(shape[1:]))
        params[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        params[f"{name}.b"] = np.zeros(_bias_size(kind, shape))
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    return NetworkState(params, grads, seed)


@dataclass
class ForwardTrace:
    head_outputs: list
    caches: dict = field(default_factory=dict, repr=False)
    decoder_names: tuple = ()


def _conv_block(x, params, name, stride, slope, caches):
    y, c = layers.conv3_forward(x, params[f"{name}.w"], params[f"{name}.b"], stride)
    y, a = layers.leaky_relu_forward(y, slope)
    caches[name] = (c, a)
    return y


def _conv_block_backward(grad, caches, name, grads):
    c, a = caches[name]
    g = layers.leaky_relu_backward(a, grad)
    gx, gw, gb = layers.conv3_backward(c, g)
    grads[f"{name}.w"] += gw
    grads[f"{name}.b"] += gb
    return gx


def forward(state, spec, x):
    """Run the network on ``x`` of shape (N, in_channels, D, H, W)."""
    if x.ndim != 5 or x.shape[1] != spec.in_channels:
        raise ShapeMismatch(f"expected (N, {spec.in_channels}, D, H, W) input, got {x.shape}")
    bad = [n for n in x.shape[2:] if n % spec.divisor]
    if bad:
        raise ShapeMismatch(f"spatial extent {x.shape[2:]} not divisible by {spec.divisor}")
    x = np.asarray(x, dtype=np.float64)
    p, slope = state.params, spec.negative_slope
    caches = {}
    skips = []
    h = x
    for lvl in range(1, spec.levels + 1):
        h = _conv_block(h, p, f"enc{lvl}.conv1", 1 if lvl == 1 else 2, slope, caches)
        h = _conv_block(h, p, f"enc{lvl}.conv2", 1, slope, caches)
        skips.append(h)

    heads = []
    for dec in spec.decoder_names:
        h = skips[-1]
        for lvl in range(spec.levels - 1, 0, -1):
            name = f"{dec}.up{lvl}"
            u, c = layers.convtranspose3_forward(h, p[f"{name}.w"], p[f"{name}.b"], 2)
            caches[name] = c
            h, split = layers.concat_channels(skips[lvl - 1], u)
            caches[f"{dec}.cat{lvl}"] = split
            h = _conv_block(h, p, f"{dec}.conv{lvl}a", 1, slope, caches)
            h = _conv_block(h, p, f"{dec}.conv{lvl}b", 1, slope, caches)
        name = f"{dec}.head"
        logits, c = layers.conv3_forward(h, p[f"{name}.w"], p[f"{name}.b"], 1)
        caches[name] = c
        heads.append(layers.softmax_channels(logits))
    return ForwardTrace(heads, caches, spec.decoder_names)


def backward(trace, state, spec, head_grads, wrt="logits"):
    """Accumulate parameter gradients into ``state.grads``.

    ``head_grads`` holds one array per head, taken w.r.t. the pre-softmax
    logits (``wrt="logits"``) or the softmax probabilities (``wrt="probs"``).
    Encoder gradients are the sum of every decoder's pullback, added in
    decoder order.
    """
    if len(head_grads) != len(trace.head_outputs):
        raise ShapeMismatch(f"expected {len(trace.head_outputs)} head gradients, got {len(head_grads)}")
    for g, out in zip(head_grads, trace.head_outputs):
        if g.shape != out.shape:
            raise ShapeMismatch(f"head gradient shape {g.shape} != head output {out.shape}")
    if wrt not in ("logits", "probs"):
        raise ValueError("wrt must be 'logits' or 'probs'")
    caches, grads = trace.caches, state.grads
    L = spec.levels
    skip_grads = [None] * L

    def add_skip(i, g):
        skip_grads[i] = g if skip_grads[i] is None else skip_grads[i] + g

    for dec, g, out in zip(trace.decoder_names, head_grads, trace.head_outputs):
        if wrt == "probs":
            g = layers.softmax_backward(out, g)
        name = f"{dec}.head"
        g, gw, gb = layers.conv3_backward(caches[name], g)
        grads[f"{name}.w"] += gw
        grads[f"{name}.b"] += gb
        for lvl in range(1, L):
            g = _conv_block_backward(g, caches, f"{dec}.conv{lvl}b", grads)
            g = _conv_block_backward(g, caches, f"{dec}.conv{lvl}a", grads)
            g_skip, g_up = layers.concat_channels_backward(caches[f"{dec}.cat{lvl}"], g)
            add_skip(lvl - 1, g_skip)
            name = f"{dec}.up{lvl}"
            g, gw, gb = layers.convtranspose3_backward(caches[name], np.ascontiguousarray(g_up))
            grads[f"{name}.w"] += gw
            grads[f"{name}.b"] += gb
        add_skip(L - 1, g)

    g = None
    for lvl in range(L, 0, -1):
        g = skip_grads[lvl - 1] if g is None else g + skip_grads[lvl - 1]
        g = _conv_block_backward(g, caches, f"enc{lvl}.conv2", grads)
        g = _conv_block_backward(g, caches, f"enc{lvl}.conv1", grads)
    return g
