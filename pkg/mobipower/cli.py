import argparse
import json
import logging
import os
import re
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

import mobipower
from mobipower.baselines import fp_delayed, sum_rate_at
from mobipower.decorators import solve
from mobipower.errors import ConfigError, MobipowerError, NumericError
from mobipower.metrics import (
    PROGRESS_HEADER,
    RunMetrics,
    power_dbm,
    write_json,
    write_rows,
)
from mobipower.models import (
    Algorithm,
    RunConfig,
    RunManifest,
    dbm_to_watts,
    load_config,
)
from mobipower.neural import checkpoint_load
from mobipower.orchestrator import evaluate_policy, run_allocator, run_episode_schedule

logger = logging.getLogger("mobipower")

OUTPUT_ROOT_ENV = "MOBIPOWER_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_CHECKPOINT_NAME = re.compile(r"policy_ep(\d+)\.ckpt$")


def resolve_output(path: str) -> Path:
    """
    Relative output paths are placed under $MOBIPOWER_OUTPUT_ROOT when it is set.
    """
    out = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out_dir: Path, manifest: RunManifest):
    write_json(out_dir / "manifest.json", manifest.as_dict())


def _outputs(out_dir: Path) -> List[str]:
    return [
        p.name
        for p in out_dir.iterdir()
        if p.is_file() and p.name != "manifest.json"
    ]


def _train_run(payload: dict, out_dir: str) -> str:
    config = RunConfig(payload)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest("train", config, mobipower.__version__)
    _write_manifest(out, manifest)

    result = run_episode_schedule(config, out_dir=out)
    write_json(out / "summary.json", result.summary())

    manifest.finish(_outputs(out))
    _write_manifest(out, manifest)
    return str(out)


def cmd_train(args) -> int:
    config = load_config(args.config)
    out = resolve_output(args.out)

    if args.replicas == 1:
        _train_run(config.payload, str(out))
        logger.info(f"Training run written to {out}")
        return EXIT_OK

    jobs = [
        (config.with_overrides(seed=config.seed + r).payload, str(out / f"replica{r}"))
        for r in range(args.replicas)
    ]
    with ProcessPoolExecutor(max_workers=args.workers) as executor:
        futures = [executor.submit(_train_run, payload, path) for payload, path in jobs]
        for future in futures:
            logger.info(f"Replica written to {future.result()}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = load_config(args.config)
    overrides = {
        key: value
        for key, value in (("cells", args.cells), ("links", args.links))
        if value is not None
    }
    if overrides:
        config = config.with_overrides(network=overrides)
    params, metadata = checkpoint_load(args.checkpoint)
    out = resolve_output(args.out)

    manifest = RunManifest("evaluate", config, mobipower.__version__)
    _write_manifest(out, manifest)

    window = config.output.moving_average
    with RunMetrics(out / "metrics.csv", moving_average_window=window) as metrics:
        report = evaluate_policy(
            params, config, args.deployments, args.slots, metrics=metrics
        )

    header = ["deployment", *report.algorithms]
    write_rows(out / "evaluation.csv", header, report.table())
    summary = report.as_dict()
    summary["checkpoint"] = {"path": str(args.checkpoint), "metadata": metadata}
    write_json(out / "summary.json", summary)

    manifest.finish(_outputs(out))
    _write_manifest(out, manifest)
    for name in report.algorithms:
        print(f"{name:>12} {report.mean(name):.4f} bps/Hz per link")
    return EXIT_OK


def cmd_baseline(args) -> int:
    config = load_config(args.config)
    algorithm = Algorithm(args.algorithm)
    out = resolve_output(args.out)

    manifest = RunManifest("baseline", config, mobipower.__version__)
    _write_manifest(out, manifest)

    window = config.output.moving_average
    with RunMetrics(out / "metrics.csv", moving_average_window=window) as metrics:
        run = run_allocator(
            config, algorithm, args.deployments, args.slots, metrics=metrics
        )
    write_json(out / "summary.json", run.as_dict())

    manifest.finish(_outputs(out))
    _write_manifest(out, manifest)
    print(
        f"{algorithm.value}: {run.mean_rate_per_link:.4f} bps/Hz per link, "
        f"{run.mean_iterations:.1f} iterations on average"
    )
    return EXIT_OK


def _checkpoints(run_dir: Path) -> List[Path]:
    found = []
    for path in run_dir.iterdir():
        match = _CHECKPOINT_NAME.match(path.name)
        if match:
            found.append((int(match.group(1)), path))
    return [path for _, path in sorted(found)]


def cmd_plotdata(args) -> int:
    out = resolve_output(args.out)

    for run_dir in map(Path, args.run_dirs):
        manifest_path = run_dir / "manifest.json"
        trace_path = run_dir / "trace.csv"
        if not manifest_path.is_file() or not trace_path.is_file():
            raise ConfigError(str(run_dir), "not a completed training run")
        with open(manifest_path) as f:
            config = RunConfig(json.load(f)["config"])

        checkpoints = _checkpoints(run_dir)
        if not checkpoints:
            raise ConfigError(str(run_dir), "no policy checkpoints found")

        rows = []
        for index, path in enumerate(checkpoints):
            params, metadata = checkpoint_load(path)
            report = evaluate_policy(params, config, args.deployments, args.slots)
            rows.extend(
                [index, metadata.get("episode", index + 1), name, report.mean(name)]
                for name in report.algorithms
            )

        write_rows(out / f"{run_dir.name}_progress.csv", PROGRESS_HEADER, rows)
        shutil.copyfile(trace_path, out / f"{run_dir.name}_trace.csv")
        logger.info(f"Plot data for {run_dir} written to {out}")
    return EXIT_OK


def _read_gains(path: str) -> np.ndarray:
    """
    A CSV file holds one matrix, a row per transmitter. A JSON file holds a matrix
    or a list of matrices, one per slot.
    """
    try:
        if Path(path).suffix.lower() == ".csv":
            gains = np.loadtxt(path, delimiter=",", ndmin=2)
        else:
            with open(path) as f:
                gains = np.asarray(json.load(f), dtype=float)
    except (FileNotFoundError, IsADirectoryError):
        raise ConfigError("gains", f"file not found: {path}")
    except (json.JSONDecodeError, ValueError, TypeError):
        raise ConfigError(
            "gains", f"{path} must hold a numeric matrix or a list of matrices"
        )
    if gains.ndim not in (2, 3) or gains.shape[-1] != gains.shape[-2]:
        raise ConfigError("gains", f"expected square matrices, got shape {gains.shape}")
    return gains


def cmd_solve(args) -> int:
    algorithm = Algorithm(args.algorithm)
    gains = _read_gains(args.gains)
    pmax, noise = dbm_to_watts(args.pmax_dbm), dbm_to_watts(args.noise_dbm)

    if algorithm == Algorithm.FP_DELAYED:
        history = gains if gains.ndim == 3 else gains[None]
        powers = fp_delayed(
            list(history), pmax, noise, args.tolerance, args.max_iterations
        )
        result = {
            "algorithm": algorithm.value,
            "powers_w": [p.tolist() for p in powers],
            "sum_rate": [sum_rate_at(g, p, noise) for g, p in zip(history, powers)],
        }
    else:
        if gains.ndim != 2:
            raise ConfigError("gains", f"{algorithm.value} takes a single matrix")
        solution = solve(
            algorithm,
            gains,
            pmax,
            noise,
            tol=args.tolerance,
            max_iter=args.max_iterations,
            rng=np.random.default_rng(args.seed),
        )
        result = {
            "algorithm": algorithm.value,
            "powers_w": solution.powers.tolist(),
            "powers_dbm": [
                None if np.isinf(v) else float(v) for v in power_dbm(solution.powers)
            ],
            "iterations": solution.iterations,
            "sum_rate": solution.objective,
            "objective_trace": solution.objective_trace,
        }

    print(json.dumps(result, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobipower",
        description="Distributed deep-RL power control for mobile cellular downlinks.",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v info, -vv debug"
    )
    parser.add_argument(
        "--allocators",
        action="append",
        default=[],
        metavar="MODULE",
        help="import MODULE to register extra allocators (repeatable)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser(
        "train", help="run the episode schedule and save checkpoints"
    )
    train.add_argument("--config", required=True)
    train.add_argument("--out", default="runs/train")
    train.add_argument(
        "--replicas", type=int, default=1, help="independent runs with seeds seed+r"
    )
    train.add_argument("--workers", type=int, default=None)
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser(
        "evaluate", help="greedy rollout of a checkpoint against the baselines"
    )
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--out", default="runs/evaluate")
    evaluate.add_argument("--deployments", type=int, default=None)
    evaluate.add_argument("--slots", type=int, default=None)
    evaluate.add_argument(
        "--cells", type=int, default=None, help="override network.cells"
    )
    evaluate.add_argument(
        "--links", type=int, default=None, help="override network.links"
    )
    evaluate.set_defaults(handler=cmd_evaluate)

    baselines = [a.value for a in Algorithm if a != Algorithm.POLICY]

    baseline = commands.add_parser(
        "baseline", help="run one allocator over simulated trajectories"
    )
    baseline.add_argument("--config", required=True)
    baseline.add_argument("--algorithm", required=True, choices=baselines)
    baseline.add_argument("--out", default="runs/baseline")
    baseline.add_argument("--deployments", type=int, default=None)
    baseline.add_argument("--slots", type=int, default=None)
    baseline.set_defaults(handler=cmd_baseline)

    plotdata = commands.add_parser(
        "plotdata", help="progress curves and movement traces as CSV"
    )
    plotdata.add_argument("run_dirs", nargs="+")
    plotdata.add_argument("--out", default="runs/plotdata")
    plotdata.add_argument("--deployments", type=int, default=None)
    plotdata.add_argument("--slots", type=int, default=None)
    plotdata.set_defaults(handler=cmd_plotdata)

    one_shot = commands.add_parser(
        "solve", help="run one allocator on a gain matrix from a CSV or JSON file"
    )
    one_shot.add_argument("--algorithm", required=True, choices=baselines)
    one_shot.add_argument(
        "--gains", required=True, help="gains[m][n]: transmitter m to receiver n"
    )
    one_shot.add_argument("--pmax-dbm", type=float, default=38.0)
    one_shot.add_argument("--noise-dbm", type=float, default=-114.0)
    one_shot.add_argument(
        "--tolerance",
        type=float,
        default=None,
        help="per-link rate change that stops WMMSE and FP",
    )
    one_shot.add_argument("--max-iterations", type=int, default=500)
    one_shot.add_argument("--seed", type=int, default=0)
    one_shot.set_defaults(handler=cmd_solve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=max(logging.WARNING - 10 * args.verbose, logging.DEBUG),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    try:
        try:
            mobipower.load_allocators(args.allocators)
        except ImportError as e:
            raise ConfigError("allocators", str(e))
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except NumericError as e:
        logger.error(f"Numeric failure, run aborted: {e}")
        return EXIT_NUMERIC
    except MobipowerError:
        logger.exception("Run failed")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
