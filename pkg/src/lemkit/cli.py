"""Command-line front end: ``lemkit generate | train | verify | analyze``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 training divergence. Every run writes ``manifest.json`` next to its outputs.
Heavy imports happen after argument parsing so that ``--threads`` can cap
the BLAS pool before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

TASKS = ("adding", "fhn", "noisepad", "mnist-seq", "fastslow")
SUITES = ("prop1", "prop2", "prop3", "gradcheck", "equivalence", "hmm", "all")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


def _epoch_list(text: str):
    """"80" -> 80, "80,400" -> [80, 400]."""
    parts = [int(x) for x in text.split(",") if x.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("expected an epoch or a comma-separated list of epochs")
    return parts[0] if len(parts) == 1 else parts


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed for every random draw")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    p.add_argument("--deterministic", action="store_true",
                   help="bit-reproducible outputs (wall-clock columns are zeroed)")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lemkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lemkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a dataset (npz + json sidecar)")
    g.add_argument("task", choices=TASKS)
    _common(g)
    g.add_argument("--count", type=int, default=None, help="number of sequences")
    g.add_argument("--length", type=int, default=None, help="sequence length (adding, noisepad)")
    g.add_argument("--tau", type=float, default=None)
    g.add_argument("--i-ext", type=float, default=0.5)
    g.add_argument("--a", type=float, default=0.7)
    g.add_argument("--b", type=float, default=0.8)
    g.add_argument("--t-end", type=float, default=None)
    g.add_argument("--n-points", type=int, default=1000)
    g.add_argument("--signal-len", type=int, default=32)
    g.add_argument("--feature-dim", type=int, default=3)
    g.add_argument("--n-classes", type=int, default=10)
    g.add_argument("--images", type=Path)
    g.add_argument("--labels", type=Path)
    g.add_argument("--permutation-seed", type=int, default=None)
    g.add_argument("--macro-dt", type=float, default=0.05)
    g.add_argument("--micro-dt", type=float, default=0.5)
    g.add_argument("--K", type=int, default=20)
    g.add_argument("--solver", choices=("hmm", "reference"), default="hmm")

    t = sub.add_parser("train", help="train a model; flags override the config file")
    _common(t)
    t.add_argument("--config", type=Path, help="JSON file with TrainConfig fields")
    t.add_argument("--task", choices=("adding", "fhn", "noisepad"), help="generate data in-process")
    t.add_argument("--train-data", type=Path)
    t.add_argument("--val-data", type=Path)
    t.add_argument("--test-data", type=Path)
    t.add_argument("--length", type=int, default=None, help="sequence length for --task")
    t.add_argument("--n-train", type=int, default=None)
    t.add_argument("--n-val", type=int, default=None)
    t.add_argument("--n-test", type=int, default=None)
    t.add_argument("--resume", type=Path, help="checkpoint with optimizer state to continue from")
    for name, typ in (("model", str), ("d", int), ("delta-t", float), ("learning-rate", float),
                      ("batch-size", int), ("epochs", int), ("lr-decay-factor", float),
                      ("lr-decay-epoch", _epoch_list), ("grad-clip", float), ("loss", str),
                      ("readout", str), ("optimizer", str), ("test-every", int)):
        t.add_argument(f"--{name}", type=typ, default=None)

    v = sub.add_parser("verify", help="run a verification suite; exit 1 if it fails")
    v.add_argument("suite", choices=SUITES)
    _common(v)
    v.add_argument("--quick", action="store_true", help="smaller case counts")

    a = sub.add_parser("analyze", help="gate time-step histograms of a checkpoint")
    a.add_argument("what", choices=("histogram",))
    _common(a)
    a.add_argument("--checkpoint", type=Path, help="LEM checkpoint; omitted means a fresh init")
    a.add_argument("--d", type=int, default=32)
    a.add_argument("--delta-t", type=float, default=1.0)
    a.add_argument("--length", type=int, default=200)
    a.add_argument("--count", type=int, default=64)
    return parser


# -- helpers ----------------------------------------------------------------

def _manifest(args, argv, outputs, started, extra=None) -> dict:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    return {
        "command": args.command,
        "argv": list(argv),
        "resolved": resolved,
        "seed": args.seed,
        "version": f"lemkit {__version__}",
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": [str(p) for p in outputs],
        **(extra or {}),
    }


def _write_manifest(out: Path, manifest: dict) -> None:
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))


def _split_seeds(seed: int) -> tuple:
    return ([seed, 11], [seed, 12], [seed, 13])


def _fhn_config(args):
    from .tasks import FhnConfig
    return FhnConfig(tau=0.02 if args.tau is None else args.tau, i_ext=args.i_ext, a=args.a, b=args.b,
                     t_end=400.0 if args.t_end is None else args.t_end, n_points=args.n_points)


# -- commands ---------------------------------------------------------------

def cmd_generate(args) -> tuple[int, list, dict]:
    from . import tasks
    out = args.out
    seed = args.seed
    if args.task == "fastslow":
        from .multiscale import linear_test_system, reference_stiff_solve, hmm_solve
        tau = 1e-3 if args.tau is None else args.tau
        t_end = 1.0 if args.t_end is None else args.t_end
        system = linear_test_system(tau)
        if args.solver == "hmm":
            traj = hmm_solve(system, 1.0, 0.0, args.macro_dt, args.micro_dt, args.K,
                             int(round(t_end / args.macro_dt)))
        else:
            traj = reference_stiff_solve(system, 1.0, 0.0, t_end, tau / 2)
        paths = traj.to_csv(out / "fastslow.csv")
        return EXIT_OK, list(paths), {"evaluations": traj.evaluations}
    if args.task == "adding":
        batch = tasks.adding_problem(args.length or 200, args.count or 1000, seed)
    elif args.task == "fhn":
        batch = tasks.fhn_generate(_fhn_config(args), args.count or 128, seed)
    elif args.task == "noisepad":
        batch = tasks.noise_padded_classification(args.signal_len, args.length or 1024,
                                                  args.feature_dim, args.n_classes,
                                                  args.count or 1000, seed)
    else:
        if args.images is None or args.labels is None:
            raise UsageError("mnist-seq needs --images and --labels IDX files")
        batch = tasks.mnist_load_idx(args.images, args.labels, args.permutation_seed)
    paths = tasks.save_dataset(batch, out / args.task)
    return EXIT_OK, list(paths), {"count": len(batch), "length": batch.n_steps}


_TRAIN_FLAGS = {"model": "model", "d": "d", "delta_t": "delta_t", "learning_rate": "learning_rate",
                "batch_size": "batch_size", "epochs": "epochs", "lr_decay_factor": "lr_decay_factor",
                "lr_decay_epoch": "lr_decay_epoch", "grad_clip": "grad_clip", "loss": "loss",
                "readout": "readout", "optimizer": "optimizer", "test_every": "test_every"}

_TASK_DEFAULTS = {
    "adding": {"loss": "mse", "readout": "last-step"},
    "fhn": {"loss": "mse", "readout": "per-step"},
    "noisepad": {"loss": "cross_entropy", "readout": "last-step"},
}


def _train_data(args):
    from . import tasks
    if args.task is None:
        if not (args.train_data and args.val_data and args.test_data):
            raise UsageError("give --task or all of --train-data, --val-data, --test-data")
        return tuple(tasks.load_dataset(p) for p in (args.train_data, args.val_data, args.test_data))
    s_tr, s_va, s_te = _split_seeds(args.seed)
    if args.task == "adding":
        n = args.length or 200
        sizes = (args.n_train or 2000, args.n_val or 200, args.n_test or 500)
        return tuple(tasks.adding_problem(n, c, s) for c, s in zip(sizes, (s_tr, s_va, s_te)))
    if args.task == "fhn":
        cfg = tasks.FhnConfig()
        sizes = (args.n_train or 128, args.n_val or 128, args.n_test or 1024)
        return tuple(tasks.fhn_generate(cfg, c, s) for c, s in zip(sizes, (s_tr, s_va, s_te)))
    n = args.length or 256
    sizes = (args.n_train or 1000, args.n_val or 200, args.n_test or 500)
    templates = tasks.noisepad.class_templates(32, 3, 10, args.seed)
    return tuple(tasks.noise_padded_classification(32, n, 3, 10, c, s, templates=templates)
                 for c, s in zip(sizes, (s_tr, s_va, s_te)))


def cmd_train(args) -> tuple[int, list, dict]:
    from .training import (TrainConfig, TrainingDivergence, checkpoint_load, checkpoint_save,
                           train_run)
    fields = {}
    if args.task in _TASK_DEFAULTS:
        fields.update(_TASK_DEFAULTS[args.task])
    if args.config is not None:
        try:
            fields.update(json.loads(args.config.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            fields[key] = value
    fields["seed"] = args.seed
    fields["deterministic"] = args.deterministic
    try:
        config = TrainConfig.from_dict(fields)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from exc
    train, val, test = _train_data(args)
    resume = checkpoint_load(args.resume, config.model) if args.resume else None
    out = args.out
    try:
        result = train_run(config, train, val, test, resume=resume,
                           log=lambda s: print(s, file=sys.stderr))
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED, [], {"config": config.to_dict(), "error": str(exc)}
    paths = [out / "checkpoint.bin", out / "best.bin", out / "metrics.csv", out / "metrics.json",
             out / "config.json"]
    checkpoint_save(paths[0], result.final_params, result.optimizer)
    checkpoint_save(paths[1], result.best_params)
    result.metrics.to_csv(paths[2])
    paths[3].write_text(json.dumps(result.metrics.summary(), indent=2, sort_keys=True))
    paths[4].write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    print(json.dumps(result.metrics.summary()))
    return EXIT_OK, paths, {"config": config.to_dict(), "summary": result.metrics.summary()}


def cmd_verify(args) -> tuple[int, list, dict]:
    from . import analysis
    quick = args.quick
    seed = args.seed
    runners = {
        "prop1": lambda: analysis.prop1_suite(20 if quick else 100, 200, seed=seed),
        "prop2": lambda: analysis.prop2_suite(10 if quick else 50, seed=seed),
        "prop3": lambda: analysis.prop3_scaling(seed=seed)[2],
        "gradcheck": lambda: analysis.gradcheck_suite(4 if quick else 20, seed=seed),
        "equivalence": lambda: analysis.equivalence_suite(seed=seed),
        "hmm": lambda: analysis.hmm_suite(),
    }
    names = [s for s in SUITES if s != "all"] if args.suite == "all" else [args.suite]
    paths, status = [], {}
    for name in names:
        report = runners[name]()
        path = args.out / f"{name}.json"
        report.save(path)
        paths.append(path)
        status[name] = report.passed
        print(f"{name}: {'PASS' if report.passed else 'FAIL'} (worst margin {report.worst_margin:.4g})")
    code = EXIT_OK if all(status.values()) else EXIT_VERIFY
    return code, paths, {"results": status}


def cmd_analyze(args) -> tuple[int, list, dict]:
    from .analysis import delta_t_histogram
    from .cell import init_params
    from .tasks import adding_problem
    from .training import checkpoint_load
    if args.checkpoint is not None:
        params, _ = checkpoint_load(args.checkpoint, "lem")
    else:
        params = init_params(args.d, 2, 1, args.delta_t, [args.seed, 0])
    if params.m != 2:
        raise UsageError(f"histograms run on adding-problem inputs (m=2); checkpoint has m={params.m}")
    data = adding_problem(args.length, args.count, [args.seed, 21])
    hist = delta_t_histogram(params, [data.time_major()])
    paths = [args.out / "gate_values.csv", args.out / "histogram.json"]
    hist.to_csv(paths[0])
    paths[1].write_text(json.dumps(hist.summary(), indent=2, sort_keys=True))
    print(json.dumps(hist.summary()))
    return EXIT_OK, paths, {"summary": hist.summary()}


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "verify": cmd_verify, "analyze": cmd_analyze}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads is not None:
        if args.threads < 1:
            parser.print_usage(sys.stderr)
            print("lemkit: --threads must be positive", file=sys.stderr)
            return EXIT_USAGE
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    from ._paramset import CheckpointError
    from .tasks.base import DatasetFormatError
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        code, outputs, extra = COMMANDS[args.command](args)
    except (UsageError, CheckpointError, DatasetFormatError, FileNotFoundError, ValueError) as exc:
        print(f"lemkit: error: {exc}", file=sys.stderr)
        code, outputs, extra = EXIT_USAGE, [], {"error": str(exc)}
    extra["exit_code"] = code
    _write_manifest(args.out, _manifest(args, argv, outputs, started, extra))
    return code


if __name__ == "__main__":
    sys.exit(main())
