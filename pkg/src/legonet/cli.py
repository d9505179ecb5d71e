"""Command-line entry point.

Subcommands: data gen|validate|split, train, infer, unlearn, baseline
fit|unlearn, bench run|sweep|cost, ckpt diff. Logs go to stderr; results
(CSV, JSON, checkpoints, datasets) go only to the paths named by flags, or
to stdout when a path is "-". Exit codes: 0 success, 2 usage, 3 invalid
data/config, 4 file IO, 70 internal error; `ckpt diff` additionally exits 1
when the checkpoints differ.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback

import numpy as np

from .adapter import TrainerConfig
from .baselines import (
    FixSisaModel,
    SingleHeadModel,
    check_dataset as check_dataset_baseline,
    fixsisa_fit,
    fixsisa_predict_proba,
    fixsisa_unlearn,
    ngrad,
    single_fit,
    single_predict_proba,
    single_retrain,
    split_forget,
    tune,
)
from .bench import (
    Scenario,
    SystemSpec,
    cost_report,
    rows_to_csv,
    run_scenario,
    sweep,
)
from .data import (
    SynthConfig,
    load_dataset,
    save_dataset,
    save_dataset_csv,
    split,
    synth_generate,
)
from .errors import (
    ConfigError,
    DigestMismatchError,
    DimensionError,
    EmptySetError,
    FormatError,
    IoError,
    UnknownIdError,
    ValidationError,
)
from .model import LegoConfig, LegoModel, fit, predict_proba
from .persist import load, save, states_equal
from .seeding import NGRAD_STREAM, TUNE_STREAM, mix_seed
from .unlearn import UnlearnRequest, unlearn, verify_erasure

log = logging.getLogger("lego")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_INTERNAL = 70

_VALIDATION_ERRORS = (
    ValidationError,
    ConfigError,
    DimensionError,
    UnknownIdError,
    EmptySetError,
    FormatError,
    DigestMismatchError,
)


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _save_dataset_by_ext(ds, path: str) -> None:
    if str(path).endswith(".csv"):
        save_dataset_csv(ds, path)
    else:
        save_dataset(ds, path)


def _trainer_from_args(args) -> TrainerConfig:
    return TrainerConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        l2_penalty=args.l2,
        use_bias=args.bias,
        init_std=args.init_std,
    )


def _add_trainer_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("trainer")
    g.add_argument("--epochs", type=int, default=30, help="training epochs (default 30)")
    g.add_argument("--batch-size", type=int, default=32, help="mini-batch size (default 32)")
    g.add_argument("--lr", type=float, default=0.1, help="learning rate (default 0.1)")
    g.add_argument("--l2", type=float, default=1e-4, help="L2 penalty on weights (default 1e-4)")
    g.add_argument("--bias", action="store_true", help="train a bias term")
    g.add_argument("--init-std", type=float, default=0.01, help="init weight std (default 0.01)")


def _add_forget_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ids", help="file with one decimal sample id per line")
    p.add_argument("--id", type=int, action="append", help="one id to remove (repeatable)")
    p.add_argument(
        "--class", dest="victim_class", type=int, help="remove every retained id of this class"
    )


def _read_ids_file(path: str) -> list[int]:
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise IoError(f"cannot read ids file {path}: {e}") from e
    out = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: not a decimal id: {line!r}") from None
    return out


def _collect_forget_ids(args, retained: np.ndarray, train) -> list[int]:
    ids: list[int] = []
    if args.ids:
        ids.extend(_read_ids_file(args.ids))
    if args.id:
        ids.extend(args.id)
    if args.victim_class is not None:
        rows = train.rows_for_ids(retained)
        mask = train.labels[rows] == args.victim_class
        ids.extend(int(i) for i in retained[mask])
        if not mask.any():
            raise ValidationError(f"no retained ids of class {args.victim_class}")
    ids = list(dict.fromkeys(ids))
    if not ids:
        raise ValidationError("nothing to remove: pass --ids, --id or --class")
    return ids


# --- command handlers --------------------------------------------------------


def _cmd_data_gen(args) -> int:
    cfg = SynthConfig(
        num_classes=args.classes,
        dim=args.dim,
        samples_per_class=args.per_class,
        cluster_separation=args.separation,
        noise_std=args.std,
        seed=args.seed,
    )
    ds = synth_generate(cfg)
    _save_dataset_by_ext(ds, args.out)
    print(f"wrote {args.out}: N={len(ds)} d={ds.dim} C={ds.num_classes}")
    return EXIT_OK


def _cmd_data_validate(args) -> int:
    ds = load_dataset(args.path)
    print(f"ok N={len(ds)} d={ds.dim} C={ds.num_classes} digest={ds.digest().hex()}")
    return EXIT_OK


def _cmd_data_split(args) -> int:
    ds = load_dataset(args.data)
    train, test = split(ds, args.test_frac, args.seed)
    _save_dataset_by_ext(train, args.train_out)
    _save_dataset_by_ext(test, args.test_out)
    print(f"wrote {args.train_out}: N={len(train)}")
    print(f"wrote {args.test_out}: N={len(test)}")
    return EXIT_OK


def _cmd_train(args) -> int:
    ds = load_dataset(args.data)
    cfg = LegoConfig(
        n_adapters=args.n,
        k_active=args.k,
        seed=args.seed,
        perturb_scale=args.perturb,
        ensemble=args.ensemble,
        trainer=_trainer_from_args(args),
    )
    keys = None
    if args.keys_from:
        src = load(args.keys_from)
        if not isinstance(src, LegoModel):
            raise ValidationError(f"--keys-from {args.keys_from} is not a lego checkpoint")
        keys = src.keys
        log.info("reusing keys from %s", args.keys_from)
    model = fit(ds, cfg, keys=keys, jobs=args.threads)
    digest = save(model, args.out)
    print(f"wrote {args.out}: digest={digest.hex()}")
    return EXIT_OK


def _predict_proba_any(model, encoding) -> np.ndarray:
    if isinstance(model, LegoModel):
        return predict_proba(model, encoding)
    if isinstance(model, SingleHeadModel):
        return single_predict_proba(model, encoding)
    return fixsisa_predict_proba(model, encoding)


def _cmd_infer(args) -> int:
    model = load(args.ckpt)
    ds = load_dataset(args.data)
    if ds.dim != model.dim:
        raise DimensionError(f"data dim {ds.dim} does not match model dim {model.dim}")
    C = model.num_classes
    header = "id,label,pred"
    if args.proba:
        header += "," + ",".join(f"p{c}" for c in range(C))
    lines = [header]
    for i in range(len(ds)):
        p = _predict_proba_any(model, ds.encodings[i])
        row = f"{int(ds.ids[i])},{int(ds.labels[i])},{int(np.argmax(p))}"
        if args.proba:
            row += "," + ",".join(repr(float(v)) for v in p)
        lines.append(row)
    _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_unlearn(args) -> int:
    model = load(args.ckpt)
    if not isinstance(model, LegoModel):
        raise ValidationError("not a lego checkpoint; use `lego baseline unlearn`")
    train = load_dataset(args.data)
    ids = _collect_forget_ids(args, model.retained_ids, train)
    request = UnlearnRequest(ids=tuple(ids), batched=args.batched)
    new_model, report = unlearn(model, request, train, jobs=args.threads)
    digest = save(new_model, args.out)
    if args.report:
        payload = dict(report.to_dict(), erased=verify_erasure(new_model, ids))
        _write_text(args.report, json.dumps(payload, indent=2) + "\n")
    print(
        f"wrote {args.out}: digest={digest.hex()} removed={len(ids)} "
        f"retrained_adapters={report.retrained_adapters}"
    )
    return EXIT_OK


def _cmd_baseline_fit(args) -> int:
    ds = load_dataset(args.data)
    trainer = _trainer_from_args(args)
    if args.method == "single":
        model = single_fit(ds, trainer, args.seed)
    else:
        model = fixsisa_fit(ds, args.shards, trainer, args.seed, jobs=args.threads)
    digest = save(model, args.out)
    print(f"wrote {args.out}: digest={digest.hex()}")
    return EXIT_OK


def _cmd_baseline_unlearn(args) -> int:
    model = load(args.ckpt)
    train = load_dataset(args.data)
    if args.method == "fixsisa":
        if not isinstance(model, FixSisaModel):
            raise ValidationError("--method fixsisa needs a fixsisa checkpoint")
        ids = _collect_forget_ids(args, model.retained(), train)
        new_model, impacted = fixsisa_unlearn(model, ids, train, jobs=args.threads)
        note = f"retrained_shards={len(impacted)}"
    else:
        if not isinstance(model, SingleHeadModel):
            raise ValidationError(f"--method {args.method} needs a single-head checkpoint")
        ids = _collect_forget_ids(args, model.trained_ids, train)
        if args.method == "retrain":
            new_model = single_retrain(model, ids, train)
            note = f"retrained_samples={len(new_model.trained_ids)}"
        elif args.method == "tune":
            check_dataset_baseline(model, train)
            retained, _ = split_forget(model.trained_ids, ids)
            new_model = tune(
                model,
                train.subset(retained),
                model.trainer,
                mix_seed(model.seed, TUNE_STREAM),
                epochs=args.update_epochs,
            )
            note = f"tuned_on={len(retained)}"
        else:
            check_dataset_baseline(model, train)
            _, arr = split_forget(model.trained_ids, ids)
            new_model = ngrad(
                model,
                train.subset(arr),
                model.trainer,
                mix_seed(model.seed, NGRAD_STREAM),
                epochs=args.update_epochs,
            )
            note = f"ascended_on={len(arr)}"
    digest = save(new_model, args.out)
    print(f"wrote {args.out}: digest={digest.hex()} removed={len(ids)} {note}")
    return EXIT_OK


def _parse_system(text: str) -> SystemSpec:
    kind, _, rest = text.partition(":")
    fields = {}
    if rest:
        for part in rest.split(","):
            key, eq, val = part.partition("=")
            if not eq:
                raise ConfigError(f"bad system spec {text!r} (want kind:key=value,...)")
            try:
                fields[key.strip()] = int(val)
            except ValueError:
                raise ConfigError(f"bad integer in system spec {text!r}: {val!r}") from None
    rename = {"n": "n_adapters", "k": "k_active", "s": "num_shards", "epochs": "update_epochs"}
    kwargs = {}
    for key, val in fields.items():
        if key not in rename:
            raise ConfigError(f"unknown key {key!r} in system spec {text!r}")
        kwargs[rename[key]] = val
    spec = SystemSpec(kind=kind, **kwargs)
    spec.validate()
    return spec


def _cmd_bench_run(args) -> int:
    train = load_dataset(args.data)
    test = load_dataset(args.test)
    scenario = Scenario(task=args.task, m=args.m, repetitions=args.reps, seed=args.seed)
    systems = [_parse_system(t) for t in args.systems]
    rows = run_scenario(train, test, scenario, systems, _trainer_from_args(args), jobs=args.threads)
    _write_text(args.out, rows_to_csv(rows))
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"bad integer list {text!r}") from None


def _cmd_bench_sweep(args) -> int:
    train = load_dataset(args.data)
    test = load_dataset(args.test)
    if args.mode == "fix-k":
        if args.k is None or not args.n_list:
            raise ConfigError("fix-k needs --k and --n-list")
        pairs = [(n, args.k) for n in _int_list(args.n_list)]
    elif args.mode == "fix-n":
        if args.n is None or not args.k_list:
            raise ConfigError("fix-n needs --n and --k-list")
        pairs = [(args.n, k) for k in _int_list(args.k_list)]
    else:
        if args.ratio is None or not args.n_list:
            raise ConfigError("fix-ratio needs --ratio and --n-list")
        pairs = []
        for n in _int_list(args.n_list):
            if n % args.ratio:
                raise ConfigError(f"n={n} is not a multiple of ratio {args.ratio}")
            pairs.append((n, n // args.ratio))
    rows = sweep(train, test, pairs, _trainer_from_args(args), seed=args.seed, jobs=args.threads)
    _write_text(args.out, rows_to_csv(rows))
    return EXIT_OK


def _cmd_bench_cost(args) -> int:
    report = cost_report(
        d=args.d,
        C=args.C,
        n=args.n,
        k=args.k,
        s=args.s,
        N=args.N,
        encoder_params=args.encoder_params,
        encoder_flops=args.encoder_flops,
        use_bias=args.bias,
    )
    _write_text(args.out, json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def _cmd_ckpt_diff(args) -> int:
    equal, diagnostic = states_equal(args.a, args.b)
    if equal:
        print("equal")
        return EXIT_OK
    print(diagnostic)
    return 1


# --- parser ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lego",
        description="Exact machine unlearning over fixed embeddings: "
        "train, remove samples verifiably, benchmark.",
    )
    parser.add_argument(
        "--log-level",
        default=os.environ.get("LEGO_LOG", "warning"),
        choices=["debug", "info", "warning", "error"],
        help="stderr log verbosity (env LEGO_LOG)",
    )
    parser.add_argument(
        "--threads", type=int, default=1, help="adapter-level parallelism (default 1)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    # data
    data = sub.add_parser("data", help="generate, validate, split datasets")
    dsub = data.add_subparsers(dest="subcommand", required=True)

    gen = dsub.add_parser("gen", help="synthesize a Gaussian-mixture dataset")
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--dim", type=int, required=True)
    gen.add_argument("--per-class", type=int, required=True)
    gen.add_argument("--separation", type=float, default=3.0, help="min center distance (default 3)")
    gen.add_argument("--std", type=float, default=1.0, help="within-cluster std (default 1)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help=".lgem binary or .csv")
    gen.set_defaults(func=_cmd_data_gen)

    val = dsub.add_parser("validate", help="check a dataset file's invariants")
    val.add_argument("path")
    val.set_defaults(func=_cmd_data_validate)

    spl = dsub.add_parser("split", help="stratified train/test split")
    spl.add_argument("--data", required=True)
    spl.add_argument("--test-frac", type=float, required=True)
    spl.add_argument("--seed", type=int, default=0)
    spl.add_argument("--train-out", required=True)
    spl.add_argument("--test-out", required=True)
    spl.set_defaults(func=_cmd_data_split)

    # train
    train = sub.add_parser("train", help="fit the adapter network")
    train.add_argument("--data", required=True)
    train.add_argument("--n", type=int, required=True, help="adapter count")
    train.add_argument("--k", type=int, required=True, help="activated adapters per sample")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--perturb", type=float, default=0.01, help="key perturbation scale")
    train.add_argument("--ensemble", choices=["prob", "logit"], default="prob")
    train.add_argument("--keys-from", help="reuse the key set of an existing lego checkpoint")
    train.add_argument("--out", required=True)
    _add_trainer_flags(train)
    train.set_defaults(func=_cmd_train)

    # infer
    infer = sub.add_parser("infer", help="classify a dataset with any checkpoint")
    infer.add_argument("--ckpt", required=True)
    infer.add_argument("--data", required=True)
    infer.add_argument("--proba", action="store_true", help="include class probabilities")
    infer.add_argument("--out", default="-", help="CSV path or - for stdout")
    infer.set_defaults(func=_cmd_infer)

    # unlearn
    unl = sub.add_parser("unlearn", help="remove samples from a lego checkpoint, exactly")
    unl.add_argument("--ckpt", required=True)
    unl.add_argument("--data", required=True, help="the training dataset file")
    _add_forget_flags(unl)
    unl.add_argument(
        "--batched",
        action="store_true",
        help="retrain each impacted adapter once after all removals "
        "(default: per-sample sequential)",
    )
    unl.add_argument("--out", required=True)
    unl.add_argument("--report", help="write a removal report JSON here")
    unl.set_defaults(func=_cmd_unlearn)

    # baseline
    base = sub.add_parser("baseline", help="single-head and sharded comparison systems")
    bsub = base.add_subparsers(dest="subcommand", required=True)

    bfit = bsub.add_parser("fit", help="train a baseline")
    bfit.add_argument("--method", choices=["single", "fixsisa"], required=True)
    bfit.add_argument("--data", required=True)
    bfit.add_argument("--shards", type=int, default=1, help="shard count for fixsisa")
    bfit.add_argument("--seed", type=int, default=0)
    bfit.add_argument("--out", required=True)
    _add_trainer_flags(bfit)
    bfit.set_defaults(func=_cmd_baseline_fit)

    bunl = bsub.add_parser("unlearn", help="remove samples with a baseline strategy")
    bunl.add_argument("--method", choices=["retrain", "tune", "ngrad", "fixsisa"], required=True)
    bunl.add_argument("--ckpt", required=True)
    bunl.add_argument("--data", required=True)
    _add_forget_flags(bunl)
    bunl.add_argument(
        "--update-epochs", type=int, default=None, help="tune/ngrad epochs (default: trainer's)"
    )
    bunl.add_argument("--out", required=True)
    bunl.set_defaults(func=_cmd_baseline_unlearn)

    # bench
    bench = sub.add_parser("bench", help="accuracy/time scenarios, sweeps, cost model")
    besub = bench.add_subparsers(dest="subcommand", required=True)

    brun = besub.add_parser("run", help="run a deletion scenario over systems")
    brun.add_argument("--data", required=True)
    brun.add_argument("--test", required=True)
    brun.add_argument("--task", choices=["random", "unclass"], required=True)
    brun.add_argument("--m", type=int, default=1, help="deletions for the random task")
    brun.add_argument("--reps", type=int, default=1)
    brun.add_argument("--seed", type=int, default=0)
    brun.add_argument(
        "--systems",
        nargs="+",
        required=True,
        help="e.g. lego:n=100,k=5 retrain tune ngrad fixsisa:s=20",
    )
    brun.add_argument("--out", default="-", help="CSV path or - for stdout")
    _add_trainer_flags(brun)
    brun.set_defaults(func=_cmd_bench_run)

    bsw = besub.add_parser("sweep", help="grid over (n, k)")
    bsw.add_argument("--data", required=True)
    bsw.add_argument("--test", required=True)
    bsw.add_argument("--mode", choices=["fix-k", "fix-n", "fix-ratio"], required=True)
    bsw.add_argument("--n", type=int)
    bsw.add_argument("--k", type=int)
    bsw.add_argument("--ratio", type=int)
    bsw.add_argument("--n-list", help="comma-separated n values")
    bsw.add_argument("--k-list", help="comma-separated k values")
    bsw.add_argument("--seed", type=int, default=0)
    bsw.add_argument("--out", default="-", help="CSV path or - for stdout")
    _add_trainer_flags(bsw)
    bsw.set_defaults(func=_cmd_bench_sweep)

    bco = besub.add_parser("cost", help="closed-form workload report")
    bco.add_argument("--d", type=int, required=True, help="encoding dimension")
    bco.add_argument("--C", type=int, required=True, help="class count")
    bco.add_argument("--n", type=int, required=True, help="adapter count")
    bco.add_argument("--k", type=int, required=True, help="activation count")
    bco.add_argument("--s", type=int, required=True, help="shard count")
    bco.add_argument("--N", type=int, required=True, help="training set size")
    bco.add_argument("--encoder-params", type=int, default=0)
    bco.add_argument("--encoder-flops", type=int, default=0)
    bco.add_argument("--bias", action="store_true")
    bco.add_argument("--out", default="-", help="JSON path or - for stdout")
    bco.set_defaults(func=_cmd_bench_cost)

    # ckpt
    ckpt = sub.add_parser("ckpt", help="checkpoint tools")
    csub = ckpt.add_subparsers(dest="subcommand", required=True)
    cdiff = csub.add_parser(
        "diff", help="compare two checkpoints; exit 0 if equal, 1 if they differ"
    )
    cdiff.add_argument("a")
    cdiff.add_argument("b")
    cdiff.set_defaults(func=_cmd_ckpt_diff)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else int(e.code)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except IoError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception:
        traceback.print_exc()
        print("internal error: invariant breached", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
