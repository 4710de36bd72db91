"""Model directories: ``manifest.json`` plus raw little-endian tensor files.

Weights are stored as uint8 codes (``*.u8``), folded BN scale/bias as float32
(``*.f32``). Quantization parameters are plain JSON numbers. A minimal
manifest::

    {
      "format": "pacsim-model", "version": 1,
      "input": {"shape": [8, 8, 3], "scale": 0.0039215686, "zero_point": 0},
      "layers": [
        {"name": "conv0", "kind": "conv2d", "stride": 1, "padding": 1,
         "weight": {"file": "conv0.weight.u8", "shape": [16, 3, 3, 3],
                    "scale": 0.01, "zero_point": 128},
         "bn": {"scale_file": "conv0.bn_scale.f32", "bias_file": "conv0.bn_bias.f32"},
         "activation": "relu", "output": {"scale": 0.02, "zero_point": 0},
         "mode": "exact", "approx_bits": 4, "thresholds": null},
        {"name": "pool", "kind": "maxpool2d", "size": 2},
        {"name": "flatten", "kind": "flatten"},
        ...
      ]
    }
"""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from pacsim.bitplane import QuantTensor
from pacsim.errors import LayerError, ManifestError, PacsimError
from pacsim.encoder import encode_linear
from pacsim.inference import (CONV2D, EXACT, FLATTEN, GAP, HYBRID, LINEAR, MAXPOOL, NONE, RELU,
                              LayerSpec, Model, conv_windows, mac_accumulate, run_layer)
from pacsim.pac import Thresholds

FORMAT = "pacsim-model"
VERSION = 1
MANIFEST = "manifest.json"


def _read_tensor(root, name, dtype, count, where):
    path = root / name
    if not path.is_file():
        raise ManifestError(f"{where}: missing tensor file {name}")
    data = np.fromfile(path, dtype=dtype)
    if data.size != count or path.stat().st_size != count * np.dtype(dtype).itemsize:
        raise ManifestError(f"{where}: {name} holds {data.size} values, expected {count}")
    return data


def _layer_from_json(root, i, d):
    where = f"layer {i} ({d.get('name', '?')})"
    try:
        kind = d["kind"]
        name = d.get("name", f"layer{i}")
        if kind in (MAXPOOL, GAP, FLATTEN):
            return LayerSpec(name, kind, pool_size=int(d.get("size", 2)))
        wd = d["weight"]
        shape = tuple(int(v) for v in wd["shape"])
        codes = _read_tensor(root, wd["file"], "<u1", int(np.prod(shape)), where).reshape(shape)
        weight = QuantTensor(codes, 8, float(wd["scale"]), int(wd["zero_point"]))
        f = shape[0]
        bn = d.get("bn") or {}
        bn_scale = _read_tensor(root, bn["scale_file"], "<f4", f, where) if "scale_file" in bn else None
        bn_bias = _read_tensor(root, bn["bias_file"], "<f4", f, where) if "bias_file" in bn else None
        th = d.get("thresholds")
        out = d.get("output", {})
        return LayerSpec(
            name, kind, weight,
            stride=int(d.get("stride", 1)), padding=int(d.get("padding", 0)),
            mode=d.get("mode", EXACT), approx_bits=int(d.get("approx_bits", 4)),
            thresholds=Thresholds(*th) if th is not None else None,
            bn_scale=bn_scale, bn_bias=bn_bias,
            activation=d.get("activation", NONE),
            out_scale=float(out.get("scale", 1.0)), out_zero_point=int(out.get("zero_point", 0)),
        )
    except ManifestError:
        raise
    except (KeyError, TypeError, ValueError, PacsimError) as exc:
        raise ManifestError(f"{where}: {exc!r}") from exc


def load_model(path):
    root = Path(path)
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise ManifestError(f"no {MANIFEST} in {root}")
    try:
        doc = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{mpath}: invalid JSON: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise ManifestError(f"{mpath}: not a {FORMAT} manifest")
    try:
        inp = doc["input"]
        layers = [_layer_from_json(root, i, d) for i, d in enumerate(doc["layers"])]
        protos, noise = None, 0.0
        if doc.get("data"):
            data = doc["data"]
            pshape = (int(data["count"]),) + tuple(int(v) for v in inp["shape"])
            protos = _read_tensor(root, data["prototypes_file"], "<f4", int(np.prod(pshape)), "data")
            protos, noise = protos.reshape(pshape), float(data["noise"])
        return Model(inp["shape"], float(inp["scale"]), int(inp["zero_point"]), layers, doc.get("meta", {}),
                     protos, noise)
    except LayerError as exc:
        raise ManifestError(str(exc)) from exc
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{mpath}: {exc!r}") from exc


def save_model(model, path):
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    layers = []
    for layer in model.layers:
        if not layer.is_mac:
            d = {"name": layer.name, "kind": layer.kind}
            if layer.kind == MAXPOOL:
                d["size"] = layer.pool_size
            layers.append(d)
            continue
        wfile = f"{layer.name}.weight.u8"
        layer.weight.values.astype("<u1").tofile(root / wfile)
        sfile, bfile = f"{layer.name}.bn_scale.f32", f"{layer.name}.bn_bias.f32"
        layer.bn_scale.astype("<f4").tofile(root / sfile)
        layer.bn_bias.astype("<f4").tofile(root / bfile)
        layers.append({
            "name": layer.name, "kind": layer.kind, "stride": layer.stride, "padding": layer.padding,
            "weight": {"file": wfile, "shape": list(layer.weight.shape),
                       "scale": layer.weight.scale, "zero_point": layer.weight.zero_point},
            "bn": {"scale_file": sfile, "bias_file": bfile},
            "activation": layer.activation,
            "output": {"scale": layer.out_scale, "zero_point": layer.out_zero_point},
            "mode": layer.mode, "approx_bits": layer.approx_bits,
            "thresholds": list(layer.thresholds.as_tuple()) if layer.thresholds else None,
        })
    doc = {
        "format": FORMAT, "version": VERSION,
        "input": {"shape": list(model.input_shape), "scale": model.input_scale,
                  "zero_point": model.input_zero_point},
        "layers": layers,
        "meta": model.meta,
    }
    if model.prototypes is not None:
        model.prototypes.astype("<f4").tofile(root / "prototypes.f32")
        doc["data"] = {"prototypes_file": "prototypes.f32", "count": len(model.prototypes),
                       "noise": model.input_noise}
    (root / MANIFEST).write_text(json.dumps(doc, indent=2) + "\n")
    return root


def read_inputs(path, model):
    """Raw uint8 input file holding one or more inputs of the manifest's input shape."""
    data = np.fromfile(path, dtype="<u1")
    per = int(np.prod(model.input_shape))
    if data.size == 0 or data.size % per:
        raise ManifestError(f"{path}: {data.size} bytes is not a multiple of the input size {per}")
    return data.reshape((-1,) + model.input_shape).astype(np.int64)


def random_inputs(model, count, seed):
    """Seeded inputs from the model's synthetic data distribution."""
    return sample_inputs(model, count, seed)[0]


def sample_inputs(model, count, seed):
    """``(codes, labels)`` drawn with ``seed``.

    Models carrying class prototypes draw ``prototype + gaussian noise``;
    others draw uniform codes and get labels of -1.
    """
    rng = np.random.default_rng([seed, 1])
    if model.prototypes is None:
        codes = rng.integers(0, 256, size=(count,) + model.input_shape, dtype=np.int64)
        return codes, np.full(count, -1, dtype=np.int64)
    labels = rng.integers(0, len(model.prototypes), size=count)
    img = model.prototypes[labels] + model.input_noise * rng.standard_normal((count,) + model.input_shape)
    codes = QuantTensor.quantize(img, model.input_scale, model.input_zero_point).values.astype(np.int64)
    return codes, labels.astype(np.int64)


def _quantize_weights(real, clip_sigma):
    """Per-tensor affine codes, zero point 128, clipped at ``clip_sigma`` std (max-abs if falsy)."""
    span = clip_sigma * float(real.std()) if clip_sigma else float(np.abs(real).max())
    return QuantTensor.quantize(real, max(span, 1e-12) / 127.0, 128)


def _pre_bn(x, layer):
    """Dequantized exact accumulators of ``layer`` on ``x``, before BN."""
    if layer.kind == CONV2D:
        windows, wsp = conv_windows(x, layer)
        shape = windows.shape[:2] + (layer.out_channels,)
        windows, wsp = windows.reshape(-1, windows.shape[-1]), wsp.reshape(-1, wsp.shape[-1])
    else:
        windows, wsp = x.values[None, :], encode_linear(x).counts[None, :]
        shape = (layer.out_channels,)
    acc = mac_accumulate(windows, wsp, layer, x.zero_point, x.bit_width).acc
    return acc.reshape(shape).astype(np.float64) * x.scale * layer.weight.scale


def _patch_filters(reals, count, k, rng):
    """Centered k x k patches cut at random positions from zero-padded activations."""
    n, h, w, _ = reals.shape
    pad = k // 2
    padded = np.pad(reals, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    idx, rows, cols = rng.integers(0, n, count), rng.integers(0, h, count), rng.integers(0, w, count)
    f = np.stack([padded[i, r:r + k, c:c + k, :] for i, r, c in zip(idx, rows, cols)])
    return f - f.mean(axis=(1, 2, 3), keepdims=True)


def gen_model(seed, input_hw=8, channels=(3, 64, 64), classes=10, calib=256, init="patches",
              input_noise=0.5, clip_sigma=3.0, act_quantile=0.99):
    """Seeded desk-scale CNN: conv3x3 -> conv3x3 -> maxpool2 -> flatten -> linear.

    ``init="patches"`` builds a working classifier for a synthetic task with no
    training loop. Inputs are noisy copies of ``classes`` smooth prototype
    images, CONV filters are centered activation patches and the LINEAR layer
    holds centered class-mean features. ``init="random"`` uses He-normal
    weights and uniform random inputs instead.

    Weights are quantized per tensor (zero point 128, clipped at
    ``clip_sigma`` std). BN is folded so each channel is standardized on a
    calibration set; ReLU outputs are scaled to their ``act_quantile``
    quantile and logits to their calibrated range. The first MAC layer is
    EXACT, the rest HYBRID with 4-bit approximation.
    """
    if init not in ("patches", "random"):
        raise PacsimError(f"unknown init {init!r}")
    rng = np.random.default_rng([seed, 0])
    c0, c1, c2 = channels
    model = Model((input_hw, input_hw, c0), 1.0 / 255.0, 0, [], {"generator": "gen_model", "seed": seed, "init": init})
    if init == "patches":
        low = rng.uniform(0.1, 0.9, size=(classes, input_hw // 2, input_hw // 2, c0))
        model.prototypes = np.kron(low, np.ones((1, 2, 2, 1))).astype(np.float32).astype(np.float64)
        model.input_noise = float(input_noise)
    codes, labels = sample_inputs(model, calib, seed + 1)
    acts = [model.quantize_input(x) for x in codes]

    specs = [
        ("conv0", CONV2D, (c1, 3, 3, c0), RELU),
        ("conv1", CONV2D, (c2, 3, 3, c1), RELU),
        ("pool", MAXPOOL, None, None),
        ("flatten", FLATTEN, None, None),
        ("fc", LINEAR, (classes, (input_hw // 2) ** 2 * c2), NONE),
    ]
    for name, kind, wshape, act in specs:
        if kind not in (CONV2D, LINEAR):
            layer = LayerSpec(name, kind)
        else:
            if init == "random":
                fan_in = int(np.prod(wshape[1:]))
                real = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape)
            elif kind == CONV2D:
                real = _patch_filters(np.stack([a.dequantize() for a in acts]), wshape[0], wshape[1], rng)
            else:
                feats = np.stack([a.dequantize() for a in acts])
                real = np.stack([feats[labels == c].mean(axis=0) if np.any(labels == c) else feats.mean(axis=0)
                                 for c in range(classes)])
                real = real - real.mean(axis=0, keepdims=True)
            weight = _quantize_weights(real, clip_sigma)
            probe = LayerSpec(name, kind, weight, padding=1 if kind == CONV2D else 0)
            pre = np.stack([_pre_bn(x, probe) for x in acts])
            axes = tuple(range(pre.ndim - 1))
            mean, std = pre.mean(axis=axes), pre.std(axis=axes)
            std = np.where(std > 0, std, 1.0)
            bn_scale = (1.0 / std).astype(np.float32)
            bn_bias = (-mean / std).astype(np.float32)
            post = pre * bn_scale.astype(np.float64) + bn_bias.astype(np.float64)
            if act == RELU:
                hi = float(np.quantile(np.maximum(post, 0.0), act_quantile))
                out_scale, out_zp = max(hi, 1e-6) / 255.0, 0
            else:
                lo, hi = float(post.min()), float(post.max())
                out_scale = max(hi - lo, 1e-6) / 255.0
                out_zp = int(np.clip(np.floor(-lo / out_scale + 0.5), 0, 255))
            layer = LayerSpec(name, kind, weight, padding=probe.padding, activation=act,
                              mode=EXACT if not model.mac_layers() else HYBRID, approx_bits=4,
                              bn_scale=bn_scale, bn_bias=bn_bias, out_scale=out_scale, out_zero_point=out_zp)
        # calibration propagates exact activations
        exact = replace(layer, mode=EXACT, thresholds=None) if layer.is_mac else layer
        acts = [run_layer(x, exact)[0] for x in acts]
        model.layers.append(layer)
    model.validate()
    return model
