"""Command-line entry point (``decn``).

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure.
Every random draw comes from the ``--seed`` value through named sub-streams,
so each artifact can be regenerated from the metadata it carries.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import DeConfig, de_rand_1_bin, random_search
from .diffcore import NumericError
from .evolution import (
    DEFAULT_KERNEL_SIZES,
    DecnModel,
    ModelFormatError,
    decn_run,
    dump_kernels,
    load_model,
    min_lattice_side,
    save_model,
)
from .functions import (
    FUNCTION_RANGES,
    TEST_IDS,
    arm_instance,
    make_arm_dataset,
    make_dataset,
    sample_arm_targets,
    sample_shift,
)
from .population import init_population
from .records import atomic_write_text, substream
from .training import ModelConfig, TrainConfig, train

__all__ = ["main", "build_parser", "PRESETS", "EXIT_OK", "EXIT_USAGE", "EXIT_NUMERIC"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

PRESETS = {
    "ws3": dict(depth=3, share_weights=True, lr=5e-4, K=32, epochs=5000, dim=2),
    "ws30": dict(depth=30, share_weights=True, lr=0.01, K=32, epochs=10000, dim=10),
    "nws15": dict(depth=15, share_weights=False, lr=5e-4, K=16, epochs=2000, dim=30),
    "custom": dict(depth=3, share_weights=True, lr=5e-4, K=32, epochs=5000, dim=2),
}


class UsageError(Exception):
    """Bad command-line input; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _plain(obj):
    """JSON round trip, so stored metadata compares equal after reloading."""
    return json.loads(json.dumps(obj))


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _fmt(mean: float, std: float) -> str:
    return f"{mean:.4g}({std:.4g})"


def _load(path) -> DecnModel:
    if not Path(path).is_file():
        raise UsageError(f"model file {path} does not exist")
    return load_model(path)


def _check_L(L: int, model: DecnModel) -> int:
    need = min_lattice_side(model.kernel_sizes)
    if L < need:
        raise UsageError(f"L={L} is below the minimum {need} for kernel sizes {model.kernel_sizes}")
    return L


def _check_function(fid: str) -> str:
    if fid not in FUNCTION_RANGES:
        raise UsageError(f"unknown function {fid!r}; choose from {', '.join(FUNCTION_RANGES)}")
    return fid


def _check_dim(dim: int) -> int:
    if dim < 1:
        raise UsageError("--dim must be at least 1")
    return dim


def parse_suite(text: str) -> tuple[str, str | None]:
    """``high:F4`` -> ("high", "F4"); ``low``, ``arm-sc``, ``arm-cc`` map to themselves."""
    if text in ("low", "arm-sc", "arm-cc"):
        return text, None
    kind, _, fid = text.partition(":")
    if kind == "high" and fid in TEST_IDS:
        return "high", fid
    raise UsageError(f"invalid suite {text!r}; use high:<F4..F9>, low, arm-sc or arm-cc")


# ------------------------------------------------------------------ train

def _train_model(args, dataset, dim: int) -> tuple[DecnModel, object]:
    preset = PRESETS[args.preset]
    depth = args.depth if args.depth is not None else preset["depth"]
    shared = preset["share_weights"] if args.shared is None else args.shared
    model_cfg = ModelConfig(depth, shared, tuple(args.kernel_sizes), args.init_std)
    cfg = TrainConfig(
        K=args.K if args.K is not None else preset["K"],
        epochs=args.epochs if args.epochs is not None else preset["epochs"],
        lr=args.lr if args.lr is not None else preset["lr"],
        lr_decay=args.lr_decay, decay_every=args.decay_every, clip_norm=args.clip_norm,
        T=args.T, L=args.L, seed=args.seed, instances_per_epoch=args.instances_per_epoch)
    if cfg.L < min_lattice_side(model_cfg.kernel_sizes):
        raise UsageError(f"L={cfg.L} is too small for kernel sizes {model_cfg.kernel_sizes}")
    model, log = train(model_cfg, dataset, cfg)
    info = dict(model.trained_on)
    info.update(preset=args.preset, suite=args.suite, D=dim,
                model_config=asdict(model_cfg), train_config=asdict(cfg))
    model = DecnModel(model.ems, model.share_weights, model.depth, _plain(info))
    log.metadata.update(_plain({"preset": args.preset, "suite": args.suite, "D": dim}))
    return model, log


def _suite_dataset(args):
    kind, fid = parse_suite(args.suite)
    data_rng = substream(args.seed, "dataset")
    if kind.startswith("arm"):
        dataset = make_arm_dataset(kind[4:], args.arm_n, args.functions or 64, args.arm_r, data_rng)
        return dataset, dataset.dim
    preset = PRESETS[args.preset]
    dim = _check_dim(args.dim if args.dim is not None else preset["dim"])
    if kind == "low":
        return make_dataset("low", "F4", args.functions or 3, dim, data_rng), dim
    return make_dataset("high", fid, args.functions or 1, dim, data_rng), dim


def cmd_train(args) -> int:
    dataset, dim = _suite_dataset(args)
    model, log = _train_model(args, dataset, dim)
    out = Path(args.output)
    save_model(model, out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    atomic_write_text(log_path, log.to_csv())
    final = log.mean_loss[-1] if len(log) else float("nan")
    print(f"final mean loss {final!r}")
    print(f"model -> {out}")
    print(f"log -> {log_path}")
    return EXIT_OK


# ------------------------------------------------------------------ run / compare

def _instances(fid: str, dim: int, repeats: int, seed: int):
    return [sample_shift(fid, dim, substream(seed, f"instances/{r}")) for r in range(repeats)]


def _decn_repeats(model, instances, L, seed, function):
    records = []
    for r, inst in enumerate(instances):
        S0 = init_population(L, inst, substream(seed, f"runs/decn/{r}"))
        _, record = decn_run(S0, model, inst, metadata={
            "algorithm": "decn", "function": function, "D": inst.dim, "L": L, "seed": seed,
            "repeat": r, "depth": model.depth, "share_weights": model.share_weights,
            "trained_on": model.trained_on})
        records.append(record)
    return records


def _summary(algorithm, function, dim, L, budget, seed, records, extra=None) -> dict:
    finals = [rec.final_best for rec in records]
    mean, std = _mean_std(finals)
    doc = {"algorithm": algorithm, "function": function, "D": dim, "L": L,
           "repeats": len(records), "budget": budget, "final_best_mean": mean,
           "final_best_std": std, "seed": seed, "final_best": finals,
           "report": _fmt(mean, std)}
    doc.update(extra or {})
    return doc


def _write_records(directory: Path, prefix: str, records) -> None:
    for r, rec in enumerate(records):
        rec.save(directory / f"{prefix}_seed{r:03d}.csv")


def cmd_run(args) -> int:
    model = _load(args.model)
    fid = _check_function(args.function)
    dim = _check_dim(args.dim)
    L = _check_L(args.L, model)
    instances = _instances(fid, dim, args.repeats, args.seed)
    records = _decn_repeats(model, instances, L, args.seed, fid)
    out = Path(args.output)
    _write_records(out, f"decn_{fid}", records)
    summary = _summary("decn", fid, dim, L, L * L * (model.depth + 1), args.seed, records,
                       {"model": str(args.model)})
    atomic_write_text(out / f"summary_decn_{fid}.json", _dump_json(summary))
    print(f"decn {fid} D={dim}: {summary['report']}")
    return EXIT_OK


def cmd_compare(args) -> int:
    model = _load(args.model)
    fid = _check_function(args.function)
    dim = _check_dim(args.dim)
    L = _check_L(args.L, model)
    budget = L * L * (model.depth + 1)
    if args.budget is not None and args.budget != budget:
        raise UsageError(f"budget {args.budget} differs from the DECN budget {budget} "
                         f"(L={L}, depth={model.depth})")
    if args.de_pop > budget:
        raise UsageError(f"DE population {args.de_pop} exceeds the budget {budget}")
    instances = _instances(fid, dim, args.repeats, args.seed)
    results = {"decn": _decn_repeats(model, instances, L, args.seed, fid)}
    if "de" in args.baselines:
        cfg = DeConfig(args.de_pop, args.F, args.CR, budget, seed=args.seed)
        results["de"] = [de_rand_1_bin(inst, cfg, substream(args.seed, f"runs/de/{r}"))[1]
                         for r, inst in enumerate(instances)]
    if "random" in args.baselines:
        results["random"] = [random_search(inst, budget, substream(args.seed, f"runs/random/{r}"))[1]
                             for r, inst in enumerate(instances)]
    out = Path(args.output)
    rows = []
    for name, records in results.items():
        for r, rec in enumerate(records):
            rec.metadata.update(seed=args.seed, repeat=r, function=fid)
        _write_records(out, f"{name}_{fid}", records)
        rows.append(_summary(name, fid, dim, L, budget, args.seed, records))
        print(f"{name:>7} {fid} D={dim}: {rows[-1]['report']} "
              f"(evals {max(rec.final_evals for rec in records)})")
    decn_final = np.array(rows[0]["final_best"])
    wins = {row["algorithm"]: int(np.sum(decn_final < np.array(row["final_best"])))
            for row in rows[1:]}
    doc = {"function": fid, "D": dim, "L": L, "budget": budget, "repeats": args.repeats,
           "seed": args.seed, "model": str(args.model), "algorithms": rows,
           "decn_paired_wins": wins}
    atomic_write_text(out / f"compare_{fid}.json", _dump_json(doc))
    return EXIT_OK


# ------------------------------------------------------------------ arm

def cmd_arm(args) -> int:
    case = args.case.lower()
    if case not in ("sc", "cc"):
        raise UsageError(f"invalid arm case {args.case!r}; use sc or cc")
    if args.model:
        model = _load(args.model)
    else:
        args.suite = f"arm-{case}"
        args.functions = args.targets
        dataset = make_arm_dataset(case, args.n, args.targets, args.r,
                                   substream(args.seed, "dataset"))
        model, log = _train_model(args, dataset, dataset.dim)
        save_model(model, Path(args.output) / f"arm_{case}_model.json")
        atomic_write_text(Path(args.output) / f"arm_{case}_train.log.csv", log.to_csv())
    L = _check_L(args.L, model)
    budget = L * L * (model.depth + 1)
    targets = sample_arm_targets(args.test_targets, args.r, substream(args.seed, "test-targets"))
    decn_recs, rand_recs = [], []
    for t, p in enumerate(targets):
        inst = arm_instance(case, args.n, p, args.r)
        S0 = init_population(L, inst, substream(args.seed, f"runs/decn/{t}"))
        _, rec = decn_run(S0, model, inst, metadata={
            "algorithm": "decn", "function": inst.id, "D": inst.dim, "L": L,
            "seed": args.seed, "target": p.tolist(), "r": args.r})
        decn_recs.append(rec)
        _, rrec = random_search(inst, budget, substream(args.seed, f"runs/random/{t}"))
        rrec.metadata.update(seed=args.seed, target=p.tolist(), r=args.r)
        rand_recs.append(rrec)
    out = Path(args.output)
    fid = decn_recs[0].metadata["function"]
    _write_records(out, f"decn_{fid}", decn_recs)
    _write_records(out, f"random_{fid}", rand_recs)
    extra = {"case": case, "n": args.n, "r": args.r, "targets": args.targets}
    rows = [_summary("decn", fid, decn_recs[0].metadata["D"], L, budget, args.seed, decn_recs, extra),
            _summary("random", fid, decn_recs[0].metadata["D"], L, budget, args.seed, rand_recs,
                     extra)]
    atomic_write_text(out / f"arm_{case}_summary.json", _dump_json({"algorithms": rows}))
    for row in rows:
        print(f"{row['algorithm']:>7} arm-{case} n={args.n} r={args.r}: {row['report']}")
    return EXIT_OK


# ------------------------------------------------------------------ kernels / DE tuning

def cmd_dump_kernels(args) -> int:
    paths = dump_kernels(_load(args.model), args.output)
    print(f"wrote {len(paths)} kernel files to {args.output}")
    return EXIT_OK


def cmd_tune_de(args) -> int:
    fid = _check_function(args.function)
    dim = _check_dim(args.dim)
    grid = np.round(np.arange(0.0, 1.0 + 1e-9, args.step), 10)
    instances = _instances(fid, dim, args.repeats, args.seed)
    rows = []
    for F in grid:
        for CR in grid[grid > 0]:
            cfg = DeConfig(args.pop, float(F), float(CR), args.budget, seed=args.seed)
            finals = [de_rand_1_bin(inst, cfg, substream(args.seed, f"runs/de/{r}"))[1].final_best
                      for r, inst in enumerate(instances)]
            mean, std = _mean_std(finals)
            rows.append({"F": float(F), "CR": float(CR), "final_best_mean": mean,
                         "final_best_std": std})
    best = min(rows, key=lambda row: row["final_best_mean"])
    doc = {"function": fid, "D": dim, "budget": args.budget, "pop_size": args.pop,
           "repeats": args.repeats, "seed": args.seed, "step": args.step, "grid": rows,
           "best": best}
    atomic_write_text(Path(args.output), _dump_json(doc))
    print(f"best F={best['F']} CR={best['CR']}: "
          f"{_fmt(best['final_best_mean'], best['final_best_std'])}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _kernel_sizes(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"kernel sizes must be comma-separated ints: {text!r}")


def _add_training_options(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="ws3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--K", type=int, help="populations per function per epoch")
    p.add_argument("--lr", type=float)
    p.add_argument("--depth", type=int)
    p.add_argument("--shared", dest="shared", action="store_true", default=None)
    p.add_argument("--no-shared", dest="shared", action="store_false")
    p.add_argument("--L", type=int, default=10)
    p.add_argument("--T", type=int, default=10, help="shift resampling period in epochs")
    p.add_argument("--lr-decay", type=float, default=0.9)
    p.add_argument("--decay-every", type=int, default=100)
    p.add_argument("--clip-norm", type=float, default=10.0)
    p.add_argument("--init-std", type=float, default=0.5)
    p.add_argument("--kernel-sizes", type=_kernel_sizes, default=list(DEFAULT_KERNEL_SIZES))
    p.add_argument("--instances-per-epoch", type=int,
                   help="train on a random subset of this many functions each epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decn", description="Train and run learned convolutional optimizers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    _add_training_options(p)
    p.add_argument("--suite", required=True, help="high:<F4..F9>, low, arm-sc or arm-cc")
    p.add_argument("--dim", type=int)
    p.add_argument("--functions", type=int, help="number of training functions / arm targets")
    p.add_argument("--arm-n", type=int, default=10)
    p.add_argument("--arm-r", type=float, default=100.0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--log", help="training log CSV (default: next to the model)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run a trained model on shifted instances")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("--function", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--L", type=int, default=10)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="runs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="DECN against baselines at equal budget")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("--function", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--L", type=int, default=10)
    p.add_argument("--budget", type=int, help="must equal L*L*(depth+1) when given")
    p.add_argument("--baselines", nargs="+", choices=["de", "random"], default=["de", "random"])
    p.add_argument("--de-pop", type=int, default=100)
    p.add_argument("--F", type=float, default=0.5)
    p.add_argument("--CR", type=float, default=0.9)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="compare")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("arm", help="planar arm reaching task")
    _add_training_options(p)
    p.add_argument("--case", required=True)
    p.add_argument("--n", type=int, default=10, help="number of segments")
    p.add_argument("--r", type=float, default=100.0, help="target radius")
    p.add_argument("--targets", type=int, default=64, help="training targets")
    p.add_argument("--test-targets", type=int, default=10)
    p.add_argument("-m", "--model", help="use this model instead of training one")
    p.add_argument("-o", "--output", default="arm")
    p.set_defaults(func=cmd_arm)

    p = sub.add_parser("dump-kernels", help="write kernels as CSV matrices")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-o", "--output", default="kernels")
    p.set_defaults(func=cmd_dump_kernels)

    p = sub.add_parser("tune-de", help="grid search over DE's F and CR")
    p.add_argument("--function", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--budget", type=int, default=400)
    p.add_argument("--pop", type=int, default=100)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="de_tuning.json")
    p.set_defaults(func=cmd_tune_de)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        # non-finite values raise NumericError, so numpy's warnings add nothing
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return args.func(args)
    except NumericError as exc:
        print(f"decn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ModelFormatError, ValueError, OSError) as exc:
        print(f"decn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
