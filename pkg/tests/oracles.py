"""Independent oracles used by the test-suite.

Nothing here calls the bit-serial engine; everything is plain integer loops.
"""

import numpy as np

from pacsim.bitplane import round_half_away
from pacsim.inference import CONV2D, FLATTEN, GAP, MAXPOOL, RELU


def reference_forward(model, codes):
    """Straight integer/float reference inference, independent of the bit-serial engine.

    Uses plain integer dot products on zero-point-shifted codes and scalar
    Python arithmetic for requantization. Only EXACT semantics.
    """
    vals = np.asarray(codes, dtype=np.int64)
    scale, zp = model.input_scale, model.input_zero_point
    for layer in model.layers:
        if layer.kind == MAXPOOL:
            s = layer.pool_size
            h, w, c = vals.shape
            out = np.zeros((h // s, w // s, c), dtype=np.int64)
            for i in range(h // s):
                for j in range(w // s):
                    out[i, j] = vals[i * s:(i + 1) * s, j * s:(j + 1) * s].max(axis=(0, 1))
            vals = out
            continue
        if layer.kind == GAP:
            vals = np.array([int(round_half_away(float(vals[:, :, c].sum()) / (vals.shape[0] * vals.shape[1])))
                             for c in range(vals.shape[2])], dtype=np.int64)
            continue
        if layer.kind == FLATTEN:
            vals = vals.reshape(-1)
            continue
        wv = layer.weight.values.astype(np.int64) - layer.weight.zero_point
        xv = vals - zp
        if layer.kind == CONV2D:
            k, st, p = layer.kernel, layer.stride, layer.padding
            xp = np.pad(xv, ((p, p), (p, p), (0, 0)))
            ho, wo, f = layer.output_shape(vals.shape)
            acc = np.zeros((ho, wo, f), dtype=np.int64)
            for i in range(ho):
                for j in range(wo):
                    patch = xp[i * st:i * st + k, j * st:j * st + k, :]
                    for o in range(f):
                        acc[i, j, o] = int((patch * wv[o]).sum())
        else:
            acc = np.array([int((xv * wv[o]).sum()) for o in range(layer.out_channels)], dtype=np.int64)
        out = np.zeros(acc.shape, dtype=np.int64)
        for idx in np.ndindex(acc.shape):
            o = idx[-1]
            real = float(acc[idx]) * scale * layer.weight.scale
            real = real * float(layer.bn_scale[o]) + float(layer.bn_bias[o])
            if layer.activation == RELU:
                real = max(real, 0.0)
            q = int(round_half_away(real / layer.out_scale)) + layer.out_zero_point
            out[idx] = min(max(q, 0), 255)
        vals, scale, zp = out, layer.out_scale, layer.out_zero_point
    return vals
