"""Command-line front end: ``hofmn {train-toy,tune,attack,curve,compare,selftest}``.

Exit codes: 0 success, 1 the attack found nothing (every sample robust),
2 usage, configuration or input error.

Every subcommand accepts ``--config FILE`` (YAML or JSON, keys named like the
long flags with dashes or underscores); flags given on the command line win.
All output files start with ``# `` header lines holding the resolved
configuration. Thread count, output paths and the timing switch are left out
of the header so outputs stay byte-identical across those settings.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from fractions import Fraction

import numpy as np
import yaml

from . import __version__
from .attack import AttackConfig, baseline_config, fmn_run
from .evaluation import (
    FixedBudgetConfig,
    RobustnessCurve,
    binary_search_min_eps,
    compare_report,
    curve_export,
    fixed_budget_attack,
    load_result,
    save_result,
    write_curve_csv,
    write_report_csv,
)
from .hyperopt import ConfigSpec, configuration_set, median_norm, rank_configurations
from .hyperopt.space import Fixed
from .model import load_dataset, load_model, make_blobs, make_mixed_features, make_rings, save_dataset, save_model
from .model import accuracy, train_adversarial, train_standard
from .seeding import derive_seed

log = logging.getLogger("hofmn")

EXIT_OK, EXIT_NOTHING, EXIT_USAGE = 0, 1, 2
BASELINE_ID = "baseline"
DEFAULT_ARCHITECTURES = {"rings": (2, 32, 32, 3), "blobs": (2, 16, 2), "mixed": (20, 32, 2)}
# keys that never enter a provenance header
VOLATILE = {"command", "config", "threads", "timing", "verbose", "func",
            "out", "history_out", "summary_out", "dataset_out"}


class UsageError(Exception):
    """Bad flags or configuration; reported with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_number(text) -> float:
    """Accept plain floats and fractions such as ``8/255``."""
    if isinstance(text, (int, float)):
        return float(text)
    try:
        return float(Fraction(str(text).strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def parse_grid(text) -> np.ndarray:
    """``start:stop:num`` (inclusive linspace) or a comma-separated list."""
    text = str(text).strip()
    if not text:
        return np.zeros(0)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("grid range must be start:stop:num")
        num = int(parts[2])
        if num < 1:
            raise argparse.ArgumentTypeError("grid needs at least one point")
        return np.linspace(parse_number(parts[0]), parse_number(parts[1]), num)
    return np.array([parse_number(v) for v in text.split(",")])


def _layer_sizes(text):
    try:
        sizes = tuple(int(v) for v in str(text).split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad architecture {text!r}") from exc
    if len(sizes) < 2 or min(sizes) < 1:
        raise argparse.ArgumentTypeError("architecture needs at least input and output sizes >= 1")
    return sizes


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


# --------------------------------------------------------------------------
# shared helpers


def _header(args, command: str) -> list[str]:
    resolved = {k: v for k, v in vars(args).items() if k not in VOLATILE}
    doc = {"command": command, "version": __version__, "config": resolved}
    return [json.dumps(doc, sort_keys=True, default=_jsonable)]


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [float(x) for x in v]
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"cannot serialise {type(v)}")


def _load_inputs(args):
    model = load_model(args.model)
    data = load_dataset(args.data)
    if data.dim != model.input_dim:
        raise UsageError(f"model expects {model.input_dim} features, dataset has {data.dim}")
    if data.y.max(initial=0) >= model.num_classes:
        raise UsageError(f"dataset labels exceed the model's {model.num_classes} classes")
    return model, data


def _read_history(path) -> tuple[dict, list[dict]]:
    header, records = {}, []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            if "header" in doc:
                header = doc["header"]
            else:
                records.append(doc)
    return header, records


def _attack_config(args) -> tuple[str, dict | None, AttackConfig]:
    """Resolve the attack from --config-id plus --params or --history."""
    config_id = args.config_id
    params = json.loads(args.params) if args.params else None
    if args.history:
        _, records = _read_history(args.history)
        pool = [r for r in records if r["median"] is not None
                and (config_id in (None, BASELINE_ID) or r["config_id"] == config_id)]
        if config_id == BASELINE_ID:
            raise UsageError("--history cannot be combined with the baseline configuration")
        if not pool:
            raise UsageError(f"no finite trial for {config_id or 'any configuration'} in {args.history}")
        best = min(pool, key=lambda r: r["median"])  # first minimum in file order
        config_id, params = best["config_id"], best["hyperparameters"]
    config_id = config_id or BASELINE_ID
    if config_id == BASELINE_ID:
        if params:
            raise UsageError("the baseline configuration takes no hyperparameters")
        return config_id, None, baseline_config(args.K)
    spec = ConfigSpec.from_id(config_id)
    if params is None:
        raise UsageError(f"{config_id} needs --params or --history")
    space = spec.space(args.K)
    full = {**{q.name: q.value for q in space.params if isinstance(q, Fixed)}, **params}
    if not space.contains(full):
        raise UsageError(f"hyperparameters {params} fall outside the search space of {config_id}")
    return config_id, full, spec.attack_config(full, args.K)


def _report(message):
    print(message, flush=True)


# --------------------------------------------------------------------------
# subcommands


def cmd_train_toy(args) -> int:
    seed = args.seed
    gen = {"rings": make_rings, "blobs": make_blobs, "mixed": make_mixed_features}[args.dataset]
    train = gen(args.n_train, derive_seed(seed, "data", "train"))
    sizes = args.architecture or DEFAULT_ARCHITECTURES[args.dataset]
    if args.trainer == "adversarial":
        model = train_adversarial(train, sizes, args.epochs, args.lr, args.eps_train, args.pgd_steps,
                                  derive_seed(seed, "train"))
    else:
        model = train_standard(train, sizes, args.epochs, args.lr, derive_seed(seed, "train"))
    model = type(model)(model.weights, model.biases, {**model.provenance, "root_seed": seed,
                                                      "dataset": args.dataset, "n_train": args.n_train})
    save_model(model, args.out)
    _report(f"train accuracy {model.provenance['train_accuracy']:.4f}")
    if args.dataset_out:
        test = gen(args.n_eval, derive_seed(seed, "data", "eval"))
        save_dataset(test, args.dataset_out)
        _report(f"eval accuracy {accuracy(model, test):.4f} on {len(test)} samples")
    return EXIT_OK


def cmd_tune(args) -> int:
    if args.T <= args.P:
        raise UsageError(f"need T > P, got T={args.T}, P={args.P}")
    model, data = _load_inputs(args)
    batch = data.subset(np.arange(min(args.batch_size, len(data))))
    specs = configuration_set()
    if args.configs:
        wanted = [c.strip() for c in args.configs.split(",") if c.strip()]
        known = {s.id: s for s in specs}
        unknown = [c for c in wanted if c not in known]
        if unknown:
            raise UsageError(f"unknown configuration ids {unknown}; choose from {sorted(known)}")
        specs = [known[c] for c in wanted]
    ranked = rank_configurations(model, batch.X, batch.y, specs, T=args.T, P=args.P, seed=args.seed,
                                 K=args.K, threads=args.threads, timing=args.timing)
    header = _header(args, "tune")
    with open(args.history_out, "w") as fh:
        fh.write(json.dumps({"header": json.loads(header[0])}, sort_keys=True) + "\n")
        for r in sorted(ranked, key=lambda r: specs.index(r.spec)):
            for rec in r.history.to_records():
                rec["median"] = rec["median"] if math.isfinite(rec["median"]) else None
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = _summary_csv(ranked, header)
    if args.summary_out:
        with open(args.summary_out, "w") as fh:
            fh.write(summary)
    sys.stdout.write(summary.split("\n", 1)[1])
    return EXIT_OK if any(math.isfinite(r.median) for r in ranked) else EXIT_NOTHING


def _summary_csv(ranked, header) -> str:
    buf = io.StringIO()
    buf.write(f"# {header[0]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "config_id", "median", "hyperparameters"])
    for i, r in enumerate(ranked, start=1):
        w.writerow([i, r.spec.id, repr(r.median), json.dumps(r.params, sort_keys=True)])
    return buf.getvalue()


def cmd_attack(args) -> int:
    model, data = _load_inputs(args)
    config_id, params, config = _attack_config(args)
    result = fmn_run(model, data.X, data.y, config, threads=args.threads)
    args.resolved_config_id, args.resolved_params = config_id, params
    save_result(result, args.out, _header(args, "attack"))
    curve = RobustnessCurve.from_result(result)
    _report(f"samples {len(result)}  clean accuracy {np.mean(result.clean_correct):.4f}")
    _report(f"median norm {median_norm(result.best_norm)!r}")
    _report(f"robust accuracy at {args.eps!r}: {curve.robust_accuracy(args.eps)!r}")
    return EXIT_OK if result.success.any() else EXIT_NOTHING


def cmd_curve(args) -> int:
    result = load_result(args.result)
    grid = args.grid
    if np.any(np.diff(grid) < 0):
        raise UsageError("grid must be sorted ascending")
    if np.any(grid < 0):
        raise UsageError("grid values must be non-negative")
    rows = curve_export(RobustnessCurve.from_result(result), grid)
    write_curve_csv(rows, args.out, _header(args, "curve"))
    _report(f"{len(rows)} rows written")
    return EXIT_OK if result.success.any() else EXIT_NOTHING


def cmd_compare(args) -> int:
    if not args.eps_low < args.eps_high:
        raise UsageError("need eps-low < eps-high")
    model, data = _load_inputs(args)
    config_id, params, config = _attack_config(args)
    args.resolved_config_id, args.resolved_params = config_id, params
    t0 = time.perf_counter()
    fmn = fmn_run(model, data.X, data.y, config, threads=args.threads)
    fmn_time = time.perf_counter() - t0
    fb = FixedBudgetConfig(epsilon=args.eps_high, steps=args.fb_steps)
    step_times = []
    t0 = time.perf_counter()

    def success(eps):
        out = fixed_budget_attack(model, data.X, data.y, fb, eps).success
        step_times.append(time.perf_counter() - t0)
        return out

    bis = binary_search_min_eps(success, args.eps_low, args.eps_high, args.bisection_steps, n=len(data))
    # an upper-end confirmation probe, if any, is charged to the last row
    step_times = step_times[:args.bisection_steps - 1] + step_times[-1:]
    times = (fmn_time, step_times) if args.timing else None
    rows = compare_report(fmn.best_norm, bis, fb.steps, config.steps, times)
    write_report_csv(rows, args.out, _header(args, "compare"))
    for r in rows:
        _report(f"{r.method:>12}  median {r.median_norm!r}  steps {r.attack_steps}")
    return EXIT_OK if (fmn.success.any() or bis.found.any()) else EXIT_NOTHING


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    ok = run_selftest(_report)
    return EXIT_OK if ok else EXIT_NOTHING


# --------------------------------------------------------------------------
# parser


def _common(p, inputs=True):
    p.add_argument("--config", help="YAML/JSON file with default values for these flags")
    p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    if inputs:
        p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--data", required=True, help="dataset CSV or NPZ file")


def _attack_flags(p):
    p.add_argument("--config-id", help="loss-optimizer-scheduler id, or 'baseline' (default)")
    p.add_argument("--params", help="hyperparameters as a JSON object")
    p.add_argument("--history", help="trial history; picks its best trial")
    p.add_argument("--K", type=_positive_int, default=200, help="attack steps (default 200)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hofmn", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-toy", help="train a small MLP on a synthetic dataset")
    _common(p, inputs=False)
    p.add_argument("--dataset", choices=("rings", "blobs", "mixed"), default="rings",
                   help="rings: 3 classes in 2-d; blobs: 2 classes in 2-d; mixed: 2 classes in 20-d")
    p.add_argument("--architecture", type=_layer_sizes,
                   help="comma-separated layer widths (default depends on --dataset)")
    p.add_argument("--trainer", choices=("standard", "adversarial"), default="adversarial")
    p.add_argument("--n-train", type=_positive_int, default=600)
    p.add_argument("--n-eval", type=_positive_int, default=256)
    p.add_argument("--epochs", type=_positive_int, default=60)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--eps-train", type=parse_number, default=0.03)
    p.add_argument("--pgd-steps", type=_positive_int, default=5)
    p.add_argument("--out", required=True, help="model JSON output")
    p.add_argument("--dataset-out", help="also write a held-out evaluation set here")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("tune", help="tune every configuration and rank them")
    _common(p)
    p.add_argument("--configs", help="comma-separated configuration ids (default: all 12)")
    p.add_argument("--T", type=_positive_int, default=32, help="trials per configuration")
    p.add_argument("--P", type=_positive_int, default=8, help="Sobol warm-up trials")
    p.add_argument("--batch-size", type=_positive_int, default=128, help="tuning samples")
    p.add_argument("--K", type=_positive_int, default=200, help="attack steps")
    p.add_argument("--timing", action="store_true", help="record wall-clock times")
    p.add_argument("--history-out", required=True)
    p.add_argument("--summary-out")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("attack", help="run one configuration and write per-sample results")
    _common(p)
    _attack_flags(p)
    p.add_argument("--eps", type=parse_number, default=8 / 255, help="budget for the printed RA")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("curve", help="robustness curve from a result file")
    _common(p, inputs=False)
    p.add_argument("--result", required=True)
    p.add_argument("--grid", type=parse_grid, default=parse_grid("0:32/255:33"),
                   help="start:stop:num or a comma list (default 0:32/255:33)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("compare", help="minimum-norm run against bisection of a fixed-budget attack")
    _common(p)
    _attack_flags(p)
    p.add_argument("--eps-low", type=parse_number, default=0.0)
    p.add_argument("--eps-high", type=parse_number, default=32 / 255)
    p.add_argument("--bisection-steps", type=_positive_int, default=5)
    p.add_argument("--fb-steps", type=_positive_int, default=50, help="fixed-budget attack steps")
    p.add_argument("--timing", action="store_true", help="fill the total_time_s column")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("selftest", help="quick internal consistency checks")
    _common(p, inputs=False)
    p.set_defaults(func=cmd_selftest)
    return parser


def _apply_config_file(parser, argv):
    """Parse ``argv`` with values from ``--config`` as defaults, so explicit flags win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((tok for tok in argv if tok in sub.choices), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    with open(known.config) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise UsageError(f"{known.config}: expected a mapping")
    subparser = sub.choices[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in doc.items():
        dest = str(key).replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            raise UsageError(f"{known.config}: unknown key {key!r} for {command}")
        action = actions[dest]
        if action.type is not None and value is not None and not isinstance(value, bool):
            if isinstance(value, list):
                value = ",".join(map(str, value))
            value = action.type(value if isinstance(value, str) else str(value))
        defaults[dest] = value
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except UsageError as exc:
        print(f"hofmn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, yaml.YAMLError, argparse.ArgumentTypeError, ValueError) as exc:
        print(f"hofmn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"hofmn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
