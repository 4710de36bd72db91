"""``pacsim`` command line: reproducible experiments that write CSV.

Every subcommand accepts ``--seed`` (falling back to ``$PACSIM_SEED``, then 0),
``--workers``, ``--output`` (stdout by default), ``--config`` (a JSON object
keyed by flag names; explicit flags win) and ``--no-timestamp``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import datetime
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from pacsim import __version__
from pacsim.analysis import MODELS, profile_csv, profile_model_sparsity, profile_tensors, rmse_csv, rmse_experiment, rmse_sweep
from pacsim.costmodel import EnergyParams, LayerGeometry, compare_schemes, format_table, reports_to_csv
from pacsim.errors import PacsimError
from pacsim.inference import EXACT, HYBRID, run_batch
from pacsim.model import gen_model, load_model, random_inputs, read_inputs, save_model
from pacsim.pac import Thresholds

SEED_ENV = "PACSIM_SEED"
# flags that never change results and stay out of the CSV header
_UNECHOED = {"command", "func", "config", "output", "workers", "no_timestamp", "logits_out", "table"}


class UsageError(Exception):
    pass


def _ratio(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"ratio must be in [0, 1], got {text}")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _non_negative(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _int_list(text):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected comma-separated positive integers, got {text!r}")
    return vals


def _thresholds(text):
    try:
        return Thresholds.parse(text)
    except (PacsimError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _emit(args, text):
    if args.output in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(args.output).write_text(text)


def _header(args, extra=()):
    lines = [f"pacsim {__version__} {args.command}", f"seed={args.seed}"]
    params = {k: v for k, v in sorted(vars(args).items()) if k not in _UNECHOED and k != "seed"}
    for k, v in params.items():
        if isinstance(v, Thresholds):
            v = ",".join(repr(t) for t in v.as_tuple())
        elif isinstance(v, list):
            v = ",".join(str(t) for t in v)
        lines.append(f"{k}={v}")
    lines.extend(extra)
    if not args.no_timestamp:
        lines.append("generated " + datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"))
    return lines


def cmd_rmse(args):
    r = rmse_experiment(args.n, args.sx, args.sw, args.trials, args.seed, args.workers, args.bit_model)
    _emit(args, rmse_csv([r], comments=_header(args, [f"hypergeometric_std={r.oracle_std()!r}"])))


def cmd_sweep(args):
    res = rmse_sweep(args.n, args.sx, args.sw, args.trials, args.seed, args.workers, args.bit_model)
    _emit(args, rmse_csv(res.rows, slope=res.slope, comments=_header(args)))


def _configure(model, args):
    if args.mode is not None:
        return model.with_mode(args.mode, args.approx_bits, args.thresholds, first_exact=not args.all_layers)
    if args.approx_bits is None and args.thresholds is None:
        return model
    layers = []
    for layer in model.layers:
        if layer.is_mac and layer.mode == HYBRID:
            kw = {}
            if args.approx_bits is not None:
                kw["approx_bits"] = args.approx_bits
            if args.thresholds is not None:
                kw["thresholds"] = args.thresholds
            layer = replace(layer, **kw)
        layers.append(layer)
    return replace(model, layers=layers)


def _inputs(model, args):
    if args.input is not None:
        return read_inputs(args.input, model)
    return random_inputs(model, args.random_inputs, args.seed)


INFER_FIELDS = ["layer", "name", "kind", "mode", "n", "windows", "avg_digital_cycles", "mean_spec"]
DEV_FIELDS = ["dev_rmse", "dev_bias", "dynamic_range", "dev_rmse_pct"]


def _f(v):
    return repr(float(v))


def cmd_infer(args):
    model = _configure(load_model(args.model), args)
    inputs = _inputs(model, args)
    res = run_batch(model, inputs, args.workers, compare_exact=args.compare_exact)
    extra = [f"inputs={len(inputs)}"]
    if args.compare_exact:
        ref = run_batch(model.with_mode(EXACT, first_exact=False), inputs, args.workers)
        agree = float(np.mean(res.argmax() == ref.argmax()))
        extra.append(f"argmax_agreement={agree!r}")
    lines = [",".join(INFER_FIELDS + (DEV_FIELDS if args.compare_exact else []))]
    for st in res.layer_stats:
        row = [st.index, st.name, st.kind, st.mode, st.n, st.windows, _f(st.avg_digital_cycles), _f(st.mean_spec)]
        if args.compare_exact:
            bias = st.dev_sum / st.dev_count if st.dev_count else float("nan")
            row += [_f(st.dev_rmse), _f(bias), st.dynamic_range, _f(st.dev_rmse_pct)]
        lines.append(",".join(str(v) for v in row))
    if args.logits_out:
        np.asarray(res.logits, dtype="<u1").tofile(args.logits_out)
    _emit(args, "".join(f"# {c}\n" for c in _header(args, extra)) + "\n".join(lines) + "\n")


def cmd_cost(args):
    params = EnergyParams.from_file(args.params) if args.params else None
    channels = args.channels if args.channels is not None else args.n
    geometry = LayerGeometry(args.groups, channels)
    reports = compare_schemes(args.n, args.macs, args.bits, args.bits, args.approx_bits,
                              args.dynamic_avg, geometry, params)
    if args.table:
        _emit(args, format_table(reports) + "\n")
    else:
        _emit(args, reports_to_csv(reports, comments=_header(args)))


def cmd_profile(args):
    sources = sum(v is not None for v in (args.model, args.tensor, args.random_tensor))
    if sources != 1:
        raise UsageError("profile needs exactly one of --model, --tensor, --random-tensor")
    if args.model is not None:
        model = load_model(args.model)
        inputs = random_inputs(model, args.random_inputs, args.seed) if args.random_inputs else None
        rows = profile_model_sparsity(model, inputs)
    elif args.tensor is not None:
        codes = np.fromfile(args.tensor, dtype="<u1")
        rows = profile_tensors({Path(args.tensor).name: codes}, args.bits, tensor="file")
    else:
        rng = np.random.default_rng([args.seed, 2])
        codes = rng.integers(0, 2**args.bits, size=args.random_tensor)
        rows = profile_tensors({"random": codes}, args.bits, tensor="uniform")
    _emit(args, profile_csv(rows, comments=_header(args)))


def cmd_gen_model(args):
    if args.output in (None, "-"):
        raise UsageError("gen-model needs --output DIR")
    model = gen_model(args.seed, input_hw=args.input_hw, channels=(3, args.width, args.width),
                      classes=args.classes, init=args.init, input_noise=args.noise)
    root = save_model(model, args.output)
    sys.stdout.write(f"{root}\n")


def _common(p):
    p.add_argument("--seed", type=_non_negative, default=None, help=f"RNG seed (default ${SEED_ENV} or 0)")
    p.add_argument("--workers", type=_positive, default=1, help="worker processes; results do not depend on it")
    p.add_argument("--output", "-o", default=None, help="output file (default stdout)")
    p.add_argument("--config", default=None, help="JSON file of flag values; explicit flags win")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp comment line")


def build_parser():
    parser = argparse.ArgumentParser(prog="pacsim", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"pacsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("rmse", "sweep"):
        p = sub.add_parser(name, help="RMSE of the sparsity-domain estimate" if name == "rmse"
                           else "RMSE over several lengths with log-log slope")
        if name == "rmse":
            p.add_argument("--n", type=_positive, default=1024)
        else:
            p.add_argument("--n", type=_int_list, default=[512, 1024, 2048, 4096])
        p.add_argument("--sx", type=_ratio, default=0.2)
        p.add_argument("--sw", type=_ratio, default=0.4)
        p.add_argument("--trials", type=_positive, default=10000)
        p.add_argument("--bit-model", choices=MODELS, default="fixed")
        _common(p)
        p.set_defaults(func=cmd_rmse if name == "rmse" else cmd_sweep)

    p = sub.add_parser("infer", help="run a model directory and report per-layer statistics")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", default=None, help="raw uint8 file of one or more inputs")
    src.add_argument("--random-inputs", type=_positive, default=16)
    p.add_argument("--mode", choices=(EXACT, HYBRID), default=None, help="override every MAC layer")
    p.add_argument("--all-layers", action="store_true", help="with --mode, also switch the first MAC layer")
    p.add_argument("--approx-bits", type=_non_negative, default=None)
    p.add_argument("--thresholds", type=_thresholds, default=None, help="TH0,TH1,TH2 for dynamic configuration")
    p.add_argument("--compare-exact", action="store_true")
    p.add_argument("--logits-out", default=None, help="write raw uint8 logits here")
    _common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("cost", help="cycles, cache traffic and energy: baseline vs hybrid")
    p.add_argument("--n", type=_positive, default=512, help="MAC length")
    p.add_argument("--macs", type=_positive, default=1)
    p.add_argument("--bits", type=_positive, default=8)
    p.add_argument("--approx-bits", type=_non_negative, default=4)
    p.add_argument("--dynamic-avg", type=float, default=None, help="measured average digital cycles")
    p.add_argument("--groups", type=_positive, default=1, help="encoder groups in the activation tensor")
    p.add_argument("--channels", type=_positive, default=None, help="values per group (default --n)")
    p.add_argument("--params", default=None, help="JSON energy parameter overrides")
    p.add_argument("--table", action="store_true", help="print a human-readable table instead of CSV")
    _common(p)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("profile", help="per-bit sparsity ratios")
    p.add_argument("--model", default=None)
    p.add_argument("--random-inputs", type=_non_negative, default=0, help="with --model, also profile activations")
    p.add_argument("--tensor", default=None, help="raw uint8 file")
    p.add_argument("--random-tensor", type=_positive, default=None, help="profile N uniform random codes")
    p.add_argument("--bits", type=_positive, default=8)
    _common(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gen-model", help="write a seeded desk-scale model directory")
    p.add_argument("--init", choices=("patches", "random"), default="patches")
    p.add_argument("--input-hw", type=_positive, default=8)
    p.add_argument("--width", type=_positive, default=64, help="CONV channels")
    p.add_argument("--classes", type=_positive, default=10)
    p.add_argument("--noise", type=float, default=0.5, help="input noise std around class prototypes")
    _common(p)
    p.set_defaults(func=cmd_gen_model)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            conf = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(conf, dict):
            parser.error("config must be a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in conf.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                parser.error(f"unknown config key {key!r}")
            action = known[dest]
            if action.type is not None and value is not None and not isinstance(value, bool):
                text = ",".join(str(v) for v in value) if isinstance(value, list) else str(value)
                try:
                    value = action.type(text)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    parser.error(f"config key {key!r}: {exc}")
            defaults[dest] = value
        # reparse so explicit flags override the config file
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.seed is None:
        env = os.environ.get(SEED_ENV)
        try:
            args.seed = int(env) if env else 0
        except ValueError:
            parser.error(f"{SEED_ENV} must be an integer, got {env!r}")
        if args.seed < 0:
            parser.error(f"{SEED_ENV} must be non-negative")
    return parser, args


def main(argv=None):
    try:
        parser, args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pacsim: error: {exc}", file=sys.stderr)
        return 2
    except (PacsimError, OSError) as exc:
        print(f"pacsim: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
