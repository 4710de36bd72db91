"""Desk-scale integer inference with exact or hybrid bit-serial MACs.

Each CONV/LINEAR output accumulates ``sum (x - z_x)(w - z_w)``. The raw term
``sum x*w`` comes from the bit-serial engine (all cycles exact, or hybrid);
the zero-point correction uses ``sum x`` recovered from the window's sparsity
vector and a per-filter ``sum w`` computed once. Accumulators then go through
BN scale/bias, optional ReLU and requantization to 8-bit codes.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pacsim import kernels
from pacsim.bitplane import QuantTensor, count_codes, decompose, round_half_away
from pacsim.encoder import encode_conv, encode_linear
from pacsim.errors import LayerError, PacsimError, ShapeMismatchError
from pacsim.pac import CycleMap, Thresholds, _round_ratio, _shift_weights, dynamic_masks

CONV2D = "conv2d"
LINEAR = "linear"
MAXPOOL = "maxpool2d"
GAP = "global_avg_pool"
FLATTEN = "flatten"
MAC_KINDS = (CONV2D, LINEAR)
KINDS = (CONV2D, LINEAR, MAXPOOL, GAP, FLATTEN)

EXACT = "exact"
HYBRID = "hybrid"

RELU = "relu"
NONE = "none"


@dataclass(eq=False)
class LayerSpec:
    """One network layer.

    MAC layers carry a weight tensor (CONV: ``(F, k, k, C)``, LINEAR:
    ``(F, N)``), folded BN scale/bias per output channel, the activation and
    the output quantization. Pooling/flatten layers only use ``kind`` and
    ``pool_size``.
    """

    name: str
    kind: str
    weight: QuantTensor = None
    stride: int = 1
    padding: int = 0
    mode: str = EXACT
    approx_bits: int = 4
    thresholds: Thresholds = None
    bn_scale: np.ndarray = None
    bn_bias: np.ndarray = None
    activation: str = NONE
    out_scale: float = 1.0
    out_zero_point: int = 0
    pool_size: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PacsimError(f"{self.name}: unknown layer kind {self.kind!r}")
        if self.kind not in MAC_KINDS:
            return
        if self.weight is None:
            raise PacsimError(f"{self.name}: MAC layer needs a weight tensor")
        if self.mode not in (EXACT, HYBRID):
            raise PacsimError(f"{self.name}: unknown mode {self.mode!r}")
        if self.activation not in (RELU, NONE):
            raise PacsimError(f"{self.name}: unknown activation {self.activation!r}")
        want = 4 if self.kind == CONV2D else 2
        if self.weight.values.ndim != want:
            raise ShapeMismatchError(f"{self.name}: weight must be {want}-D, got {self.weight.shape}")
        if self.kind == CONV2D and self.weight.shape[1] != self.weight.shape[2]:
            raise ShapeMismatchError(f"{self.name}: only square kernels are supported")
        f = self.out_channels
        self.bn_scale = np.ones(f) if self.bn_scale is None else np.asarray(self.bn_scale, dtype=np.float64)
        self.bn_bias = np.zeros(f) if self.bn_bias is None else np.asarray(self.bn_bias, dtype=np.float64)
        if self.bn_scale.shape != (f,) or self.bn_bias.shape != (f,):
            raise ShapeMismatchError(f"{self.name}: BN parameters must have shape ({f},)")
        if not np.isfinite(self.out_scale) or self.out_scale <= 0:
            raise PacsimError(f"{self.name}: output scale must be positive")
        if not 0 <= self.out_zero_point <= 255:
            raise PacsimError(f"{self.name}: output zero point must be in [0, 255]")
        if self.mode == HYBRID and not 0 <= self.approx_bits <= self.weight.bit_width:
            raise PacsimError(f"{self.name}: approx_bits must be in [0, {self.weight.bit_width}]")

    @property
    def is_mac(self):
        return self.kind in MAC_KINDS

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def kernel(self):
        return self.weight.shape[1] if self.kind == CONV2D else 1

    @property
    def in_channels(self):
        return self.weight.shape[-1]

    @property
    def fan_in(self):
        """Reduction length of one output."""
        return int(np.prod(self.weight.shape[1:]))

    @cached_property
    def weight_rows(self):
        return self.weight.values.reshape(self.out_channels, -1)

    @cached_property
    def weight_sparsity(self):
        return count_codes(self.weight_rows, self.weight.bit_width).counts

    @cached_property
    def weight_sums(self):
        """Per-filter sum of weight codes, computed offline."""
        return self.weight_rows.sum(axis=1, dtype=np.int64)

    @cached_property
    def weight_planes(self):
        return np.moveaxis(decompose(self.weight_rows, self.weight.bit_width).planes, 0, 1)

    def output_shape(self, in_shape):
        if self.kind == CONV2D:
            if len(in_shape) != 3 or in_shape[2] != self.in_channels:
                raise ShapeMismatchError(f"{self.name}: expected (H, W, {self.in_channels}) input, got {in_shape}")
            h, w, _ = in_shape
            k, s, p = self.kernel, self.stride, self.padding
            ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
            if ho < 1 or wo < 1:
                raise ShapeMismatchError(f"{self.name}: input {in_shape} too small for kernel {k}")
            return (ho, wo, self.out_channels)
        if self.kind == LINEAR:
            if tuple(in_shape) != (self.in_channels,):
                raise ShapeMismatchError(f"{self.name}: expected ({self.in_channels},) input, got {in_shape}")
            return (self.out_channels,)
        if self.kind == MAXPOOL:
            if len(in_shape) != 3:
                raise ShapeMismatchError(f"{self.name}: max-pool needs (H, W, C) input")
            return (in_shape[0] // self.pool_size, in_shape[1] // self.pool_size, in_shape[2])
        if self.kind == GAP:
            if len(in_shape) != 3:
                raise ShapeMismatchError(f"{self.name}: global average pool needs (H, W, C) input")
            return (in_shape[2],)
        return (int(np.prod(in_shape)),)


@dataclass(eq=False)
class Model:
    input_shape: tuple
    input_scale: float
    input_zero_point: int
    layers: list
    meta: dict = field(default_factory=dict)
    prototypes: np.ndarray = None
    input_noise: float = 0.0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.prototypes is not None:
            self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
            if self.prototypes.shape[1:] != self.input_shape:
                raise ShapeMismatchError(f"prototypes must have shape (K, *{self.input_shape})")
        self.validate()

    def validate(self):
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except PacsimError as exc:
                raise LayerError(i, layer.name, exc) from exc
        return shape

    @property
    def output_shape(self):
        return self.validate()

    def mac_layers(self):
        return [layer for layer in self.layers if layer.is_mac]

    def with_mode(self, mode, approx_bits=None, thresholds=None, first_exact=True):
        """Copy with every MAC layer set to ``mode`` (the first one stays EXACT if ``first_exact``)."""
        layers, seen = [], False
        for layer in self.layers:
            if layer.is_mac:
                m = EXACT if (first_exact and not seen) else mode
                kw = {"mode": m, "thresholds": thresholds if m == HYBRID else None}
                if approx_bits is not None:
                    kw["approx_bits"] = approx_bits
                layer = replace(layer, **kw)
                seen = True
            layers.append(layer)
        return replace(self, layers=layers, meta=dict(self.meta))

    def quantize_input(self, codes):
        codes = np.asarray(codes)
        if codes.shape != self.input_shape:
            raise ShapeMismatchError(f"input must have shape {self.input_shape}, got {codes.shape}")
        return QuantTensor(codes, 8, self.input_scale, self.input_zero_point)


def _pad(codes, pad, value):
    if pad == 0:
        return codes
    return np.pad(codes, ((pad, pad), (pad, pad), (0, 0)), constant_values=value)


def conv_windows(x, layer):
    """im2col windows ``(Ho, Wo, k*k*C)`` in kernel-row x kernel-col x channel order,
    plus the matching window sparsity ``(Ho, Wo, P)`` summed from per-pixel encodings."""
    k, s = layer.kernel, layer.stride
    padded = _pad(x.values, layer.padding, x.zero_point)
    win = sliding_window_view(padded, (k, k), axis=(0, 1))[::s, ::s]
    ho, wo, c = win.shape[:3]
    windows = win.transpose(0, 1, 3, 4, 2).reshape(ho, wo, k * k * c)
    pix = encode_conv(QuantTensor(padded, x.bit_width)).counts
    wsp = sliding_window_view(pix, (k, k), axis=(0, 1))[::s, ::s].sum(axis=(-2, -1))
    return windows, wsp


@dataclass
class MacResult:
    """Accumulators for one MAC layer call plus instrumentation."""

    acc: np.ndarray
    raw: np.ndarray
    digital_cycles: np.ndarray
    spec: np.ndarray
    exact_acc: np.ndarray = None


def mac_accumulate(windows, win_sparsity, layer, x_zero_point, x_bit_width=8, compare_exact=False):
    """Zero-point-corrected accumulators ``(M, F)`` for ``M`` windows of length ``n``."""
    P, Q = x_bit_width, layer.weight.bit_width
    m, n = windows.shape
    if n != layer.fan_in:
        raise ShapeMismatchError(f"{layer.name}: window length {n} != fan-in {layer.fan_in}")
    xplanes = np.moveaxis(decompose(windows, P).planes, 0, 1)
    wplanes = layer.weight_planes
    sum_x = win_sparsity @ (np.int64(1) << np.arange(P, dtype=np.int64))
    sum_w = layer.weight_sums
    spec = sum_x / (n * ((1 << P) - 1))

    def exact_raw():
        counts = kernels.cross_plane_counts(xplanes, wplanes)
        return np.einsum("mfpq,pq->mf", counts, _shift_weights(P, Q))

    if layer.mode == EXACT:
        raw = exact_raw()
        cycles = np.full(m, P * Q, dtype=np.int64)
    else:
        k = layer.approx_bits
        base = CycleMap.static(P, Q, k)
        if layer.thresholds is not None:
            masks = dynamic_masks(spec, layer.thresholds, base)
        else:
            masks = np.broadcast_to(base.deterministic, (m, P, Q))
        cycles = masks.sum(axis=(1, 2))
        det = np.zeros((m, layer.out_channels), dtype=np.int64)
        if k < min(P, Q):
            counts = kernels.cross_plane_counts(xplanes[:, k:], wplanes[:, k:])
            w_sub = _shift_weights(P, Q)[k:, k:]
            det = np.einsum("mfpq,mpq,pq->mf", counts, masks[:, k:, k:].astype(np.int64), w_sub)
        xs = win_sparsity * (np.int64(1) << np.arange(P, dtype=np.int64))
        ws = layer.weight_sparsity * (np.int64(1) << np.arange(Q, dtype=np.int64))
        num = sum_x[:, None] * sum_w[None, :] - np.einsum("mp,mpq,fq->mf", xs, masks.astype(np.int64), ws)
        raw = det + _round_ratio(num, n)

    zx, zw = int(x_zero_point), layer.weight.zero_point
    corr = -zw * sum_x[:, None] - zx * sum_w[None, :] + n * zx * zw
    res = MacResult(raw + corr, raw, cycles, spec)
    if compare_exact:
        res.exact_acc = res.acc if layer.mode == EXACT else exact_raw() + corr
    return res


def postprocess(acc, layer, in_scale):
    """BN scale/bias, activation and requantization of accumulators (last axis = channel)."""
    acc = np.asarray(acc)
    real = acc.astype(np.float64) * in_scale * layer.weight.scale
    real = real * layer.bn_scale + layer.bn_bias
    if not np.all(np.isfinite(real)):
        raise PacsimError(f"{layer.name}: non-finite intermediate value, check scales")
    if layer.activation == RELU:
        real = np.maximum(real, 0.0)
    q = round_half_away(real / layer.out_scale) + layer.out_zero_point
    q = np.clip(q, 0, 255).astype(np.int64)
    return QuantTensor(q, 8, layer.out_scale, layer.out_zero_point)


def max_pool(x, size):
    h, w, c = x.shape
    ho, wo = h // size, w // size
    v = x.values[: ho * size, : wo * size].reshape(ho, size, wo, size, c).max(axis=(1, 3))
    return x.with_values(v)


def global_avg_pool(x):
    mean = x.values.reshape(-1, x.shape[-1]).astype(np.float64).mean(axis=0)
    return x.with_values(round_half_away(mean).astype(np.int64))


@dataclass
class LayerStats:
    index: int
    name: str
    kind: str
    mode: str
    n: int
    outputs: int = 0
    windows: int = 0
    digital_cycles_sum: int = 0
    spec_sum: float = 0.0
    dev_sse: int = 0
    dev_sum: int = 0
    dev_count: int = 0
    acc_min: int = None
    acc_max: int = None
    act_ones: np.ndarray = None
    act_count: int = 0

    @property
    def avg_digital_cycles(self):
        return self.digital_cycles_sum / self.windows if self.windows else float("nan")

    @property
    def mean_spec(self):
        return self.spec_sum / self.windows if self.windows else float("nan")

    @property
    def dev_rmse(self):
        return float(np.sqrt(self.dev_sse / self.dev_count)) if self.dev_count else float("nan")

    @property
    def dynamic_range(self):
        return None if self.acc_min is None else self.acc_max - self.acc_min

    @property
    def dev_rmse_pct(self):
        rng = self.dynamic_range
        return 100.0 * self.dev_rmse / rng if rng else float("nan")

    def merge(self, other):
        self.outputs += other.outputs
        self.windows += other.windows
        self.digital_cycles_sum += other.digital_cycles_sum
        self.spec_sum += other.spec_sum
        self.dev_sse += other.dev_sse
        self.dev_sum += other.dev_sum
        self.dev_count += other.dev_count
        if other.acc_min is not None:
            self.acc_min = other.acc_min if self.acc_min is None else min(self.acc_min, other.acc_min)
            self.acc_max = other.acc_max if self.acc_max is None else max(self.acc_max, other.acc_max)
        if other.act_ones is not None:
            self.act_ones = other.act_ones.copy() if self.act_ones is None else self.act_ones + other.act_ones
            self.act_count += other.act_count
        return self


@dataclass
class NetworkResult:
    logits: np.ndarray
    layer_stats: list


def run_layer(x, layer, index=0, compare_exact=False, profile=False):
    """Apply one layer to a QuantTensor; returns ``(output, LayerStats or None)``."""
    if not layer.is_mac:
        layer.output_shape(x.shape)
        if layer.kind == MAXPOOL:
            return max_pool(x, layer.pool_size), None
        if layer.kind == GAP:
            return global_avg_pool(x), None
        return x.with_values(x.values.reshape(-1)), None

    out_shape = layer.output_shape(x.shape)
    if layer.kind == CONV2D:
        windows, wsp = conv_windows(x, layer)
        windows, wsp = windows.reshape(-1, windows.shape[-1]), wsp.reshape(-1, wsp.shape[-1])
    else:
        windows, wsp = x.values[None, :], encode_linear(x).counts[None, :]
    res = mac_accumulate(windows, wsp, layer, x.zero_point, x.bit_width, compare_exact)
    y = postprocess(res.acc.reshape(out_shape), layer, x.scale)

    st = LayerStats(index, layer.name, layer.kind, layer.mode, layer.fan_in,
                    outputs=int(res.acc.size), windows=int(res.acc.shape[0]),
                    digital_cycles_sum=int(res.digital_cycles.sum()), spec_sum=float(res.spec.sum()))
    if compare_exact:
        dev = res.acc - res.exact_acc
        st.dev_sse, st.dev_sum, st.dev_count = int((dev * dev).sum()), int(dev.sum()), int(dev.size)
        st.acc_min, st.acc_max = int(res.exact_acc.min()), int(res.exact_acc.max())
    if profile:
        st.act_ones = kernels.bit_counts(x.values.reshape(1, -1), x.bit_width)[0]
        st.act_count = int(x.values.size)
    return y, st


def run_network(model, x, compare_exact=False, profile=False):
    """Forward one input (codes or QuantTensor) through the model."""
    if not isinstance(x, QuantTensor):
        x = model.quantize_input(x)
    stats = []
    for i, layer in enumerate(model.layers):
        try:
            x, st = run_layer(x, layer, i, compare_exact, profile)
        except LayerError:
            raise
        except PacsimError as exc:
            raise LayerError(i, layer.name, exc) from exc
        if st is not None:
            stats.append(st)
    return NetworkResult(x.values.copy(), stats)


@dataclass
class BatchResult:
    logits: np.ndarray
    layer_stats: list

    def argmax(self):
        return self.logits.reshape(len(self.logits), -1).argmax(axis=1)


def _run_chunk(args):
    model, inputs, compare_exact = args
    out = [run_network(model, x, compare_exact) for x in inputs]
    return np.stack([r.logits for r in out]), [r.layer_stats for r in out]


def run_batch(model, inputs, workers=1, compare_exact=False, chunk=16):
    """Run many inputs; results are identical for any ``workers``."""
    inputs = np.asarray(inputs)
    if len(inputs) == 0:
        raise PacsimError("no inputs")
    tasks = [(model, inputs[s:s + chunk], compare_exact) for s in range(0, len(inputs), chunk)]
    if workers <= 1 or len(tasks) == 1:
        parts = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    logits = np.concatenate([p[0] for p in parts])
    merged = None
    for _, per_input in parts:
        for stats in per_input:
            if merged is None:
                merged = [replace(s, act_ones=None if s.act_ones is None else s.act_ones.copy()) for s in stats]
            else:
                for a, b in zip(merged, stats):
                    a.merge(b)
    return BatchResult(logits, merged)
