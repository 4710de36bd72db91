"""Monte-Carlo and analytic error characterization of the sparsity-domain estimate.

Random streams are counter-based: trials are cut into fixed blocks of
``BLOCK`` trials, and block ``b`` draws its activation bits from
``Philox(key=(seed, 2b))`` and its weight bits from ``Philox(key=(seed, 2b+1))``.
Results therefore do not depend on how blocks are spread over workers. Errors
are accumulated as exact integers (``n * error``), so aggregation order does
not matter either.
"""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from pacsim import kernels
from pacsim.errors import PacsimError

BLOCK = 1024
MODELS = ("fixed", "iid")


def _rng(seed, stream):
    if not 0 <= seed < 2**64:
        raise PacsimError("seed must be in [0, 2**64)")
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def ones_count(n, ratio):
    """Number of ones in a fixed-count vector: round(ratio * n), halves rounded up."""
    return int(math.floor(ratio * n + 0.5))


def _draw(rng, rows, n, ratio, model):
    if model == "iid":
        return (rng.random((rows, n)) < ratio).astype(np.uint8)
    k = ones_count(n, ratio)
    out = np.zeros((rows, n), dtype=np.uint8)
    if k == n:
        out[:] = 1
    elif k > 0:
        idx = np.argpartition(rng.random((rows, n)), k - 1, axis=1)[:, :k]
        np.put_along_axis(out, idx, 1, axis=1)
    return out


def random_bitvec(n, ratio, seed, size=None, model="fixed"):
    """Binary vector(s) of length ``n`` with sparsity ``ratio``.

    The fixed model places exactly ``round(ratio * n)`` ones uniformly at
    random; the iid model draws each bit independently. ``seed`` is an int or
    a ``(seed, stream)`` pair.
    """
    if not 0.0 <= ratio <= 1.0:
        raise PacsimError(f"sparsity ratio must be in [0, 1], got {ratio}")
    if model not in MODELS:
        raise PacsimError(f"unknown bit model {model!r}")
    seed, stream = seed if isinstance(seed, tuple) else (seed, 0)
    out = _draw(_rng(seed, stream), 1 if size is None else size, n, ratio, model)
    return out[0] if size is None else out


def hypergeometric_std(n, s_x, s_w):
    """Standard deviation of the overlap of two fixed-count vectors, one randomly permuted."""
    if n < 2:
        raise PacsimError("hypergeometric_std needs n >= 2")
    if not (0 <= s_x <= n and 0 <= s_w <= n):
        raise PacsimError("counts must lie in [0, n]")
    return math.sqrt(s_x * s_w * (n - s_x) * (n - s_w) / (n * n * (n - 1)))


@dataclass(frozen=True)
class RmseResult:
    n: int
    s_x: float
    s_w: float
    trials: int
    seed: int
    rmse_lsb: float
    rmse_pct: float
    bias: float
    model: str = "fixed"

    def oracle_std(self):
        return hypergeometric_std(self.n, ones_count(self.n, self.s_x), ones_count(self.n, self.s_w))


def _run_block(task):
    n, s_x, s_w, seed, block, rows, model = task
    x = _draw(_rng(seed, 2 * block), rows, n, s_x, model)
    w = _draw(_rng(seed, 2 * block + 1), rows, n, s_w, model)
    mac = kernels.and_popcount(x, w)
    err = n * mac - x.sum(axis=1, dtype=np.int64) * w.sum(axis=1, dtype=np.int64)
    return int((err * err).sum()), int(err.sum())


def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def rmse_experiment(n, s_x, s_w, trials, seed, workers=1, model="fixed"):
    """RMSE of ``exact_binary_mac - S_x*S_w/n`` over random bit vectors."""
    if trials < 1:
        raise PacsimError("trials must be >= 1")
    if n < 1:
        raise PacsimError("n must be >= 1")
    for r in (s_x, s_w):
        if not 0.0 <= r <= 1.0:
            raise PacsimError(f"sparsity ratio must be in [0, 1], got {r}")
    if model not in MODELS:
        raise PacsimError(f"unknown bit model {model!r}")
    tasks = [(n, s_x, s_w, seed, b, min(BLOCK, trials - b * BLOCK), model)
             for b in range(math.ceil(trials / BLOCK))]
    parts = _map(_run_block, tasks, workers)
    sse = sum(p[0] for p in parts)
    total = sum(p[1] for p in parts)
    rmse = math.sqrt(sse / trials) / n
    return RmseResult(n, s_x, s_w, trials, seed, rmse, 100.0 * rmse / n, total / (trials * n), model)


@dataclass(frozen=True)
class SweepResult:
    rows: list
    slope: float

    @property
    def slope_defined(self):
        return not math.isnan(self.slope)


def loglog_slope(ns, values):
    """Least-squares slope of log(values) against log(ns); NaN when undefined."""
    ns = np.asarray(ns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(ns) < 2 or len(set(ns.tolist())) < 2 or np.any(values <= 0):
        return math.nan
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


def rmse_sweep(n_list, s_x, s_w, trials, seed, workers=1, model="fixed"):
    if not n_list:
        raise PacsimError("n_list must be non-empty")
    rows = [rmse_experiment(n, s_x, s_w, trials, seed, workers, model) for n in n_list]
    return SweepResult(rows, loglog_slope([r.n for r in rows], [r.rmse_pct for r in rows]))


RMSE_FIELDS = ["n", "s_x", "s_w", "rmse_lsb", "rmse_pct", "bias", "trials", "seed", "model"]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def rmse_csv(rows, slope=None, comments=()):
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    fields = RMSE_FIELDS + (["slope"] if slope is not None else [])
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        d = {k: _fmt(v) for k, v in asdict(r).items() if k in RMSE_FIELDS}
        if slope is not None:
            d["slope"] = "nan" if math.isnan(slope) else repr(slope)
        writer.writerow(d)
    return buf.getvalue()


@dataclass(frozen=True)
class SparsityProfileRow:
    layer: str
    tensor: str
    bit: int
    ratio: float
    count: int


def bit_ratios(codes, bit_width=8):
    """Fraction of ones at each bit index over every element of ``codes``."""
    codes = np.asarray(codes)
    if codes.size == 0:
        raise PacsimError("cannot profile an empty tensor")
    ones = kernels.bit_counts(codes.reshape(1, -1), bit_width)[0]
    return ones / codes.size


def profile_tensors(named, bit_width=8, tensor="weight"):
    """Profile rows for a mapping of layer name -> code array."""
    rows = []
    for name, codes in named.items():
        codes = np.asarray(getattr(codes, "values", codes))
        for p, r in enumerate(bit_ratios(codes, bit_width)):
            rows.append(SparsityProfileRow(name, tensor, p, float(r), int(codes.size)))
    return rows


def profile_model_sparsity(model, inputs=None):
    """Per-layer, per-bit ratios for weights and, given inputs, layer input activations."""
    from pacsim.inference import run_network

    rows = profile_tensors({layer.name: layer.weight for layer in model.mac_layers()})
    if inputs is not None and len(inputs):
        ones, count = {}, {}
        for x in inputs:
            for st in run_network(model, x, profile=True).layer_stats:
                if st.act_ones is None:
                    continue
                ones[st.name] = ones.get(st.name, 0) + st.act_ones
                count[st.name] = count.get(st.name, 0) + st.act_count
        for name in ones:
            for p, v in enumerate(ones[name]):
                rows.append(SparsityProfileRow(name, "activation", p, float(v / count[name]), int(count[name])))
    return rows


def profile_csv(rows, comments=()):
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "tensor", "bit", "ratio", "count"])
    for r in rows:
        writer.writerow([r.layer, r.tensor, r.bit, repr(r.ratio), r.count])
    return buf.getvalue()
