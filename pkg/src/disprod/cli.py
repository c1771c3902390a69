"""Command line entry point: ``disprod run | sweep | study | serve``.

Exit status is 0 when every axis value completed, 2 when some were aborted
and 1 on configuration errors.  ``DISPROD_LOG_LEVEL`` sets the log level.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from disprod.errors import ArgumentError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2

log = logging.getLogger("disprod")


def _configure_logging():
    level = os.environ.get("DISPROD_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _coerce(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _run_spec(spec, out_dir):
    from disprod.harness import run_experiment, write_episodes, write_results

    def progress(rec):
        log.info("%s value=%s rep=%d run=%d return=%.3f steps=%d", rec.planner, rec.value, rec.repetition, rec.run, rec.total_reward, rec.steps)

    result = run_experiment(spec, progress)
    out_dir = Path(out_dir)
    write_results(result.rows, out_dir / "results.csv")
    write_episodes(result.episodes, out_dir / "episodes.csv", spec.record_wall_time)
    for row in result.rows:
        mark = " (partial)" if row.partial else ""
        print(f"{row.planner} {row.axis}={row.value}: mean_return={row.mean_return} std={row.std_return} sr={row.sr}{mark}")
    return EXIT_PARTIAL if result.partial else EXIT_OK


def cmd_run(args):
    from disprod.harness import parse_config

    spec = parse_config(args.config)
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    return _run_spec(spec, args.out)


def cmd_sweep(args):
    from disprod.harness import ExperimentSpec, parse_config

    spec = parse_config(args.config)
    update = spec.to_dict()
    update["sweep"] = {"axis": args.axis, "values": [_coerce(v) for v in args.values]}
    if args.seed is not None:
        update["seed"] = args.seed
    try:
        spec = ExperimentSpec.model_validate(update)
    except ValueError as exc:
        raise ArgumentError(str(exc)) from exc
    return _run_spec(spec, args.out)


def cmd_study(args):
    from disprod.harness import run_distribution_study, write_study

    results = run_distribution_study(args.env, args.alphas, args.depth, args.policy, args.samples, args.seed)
    path = write_study(results, Path(args.out) / "study.csv")
    for res in results:
        complete, nv = res.terminal_mean_errors()
        print(f"alpha={res.alpha}: terminal |mean error| complete={complete.max():.6g} no_variance={nv.max():.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_serve(args):
    try:
        import uvicorn
    except ImportError:
        print("serving needs uvicorn: pip install uvicorn (or the package with its serve extra)", file=sys.stderr)
        return EXIT_ERROR
    uvicorn.run("disprod.service:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="disprod", description="Distribution-propagation planning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a YAML config")
    run.add_argument("config")
    run.add_argument("--out", default="results")
    run.add_argument("--seed", type=int)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a config with the sweep axis and values overridden")
    sweep.add_argument("config")
    sweep.add_argument("--axis", required=True, choices=["alpha", "depth", "beta", "n_redundant", "restarts", "map", "none"])
    sweep.add_argument("--values", nargs="+", required=True)
    sweep.add_argument("--out", default="results")
    sweep.add_argument("--seed", type=int)
    sweep.set_defaults(func=cmd_sweep)

    study = sub.add_parser("study", help="compare propagated and sampled state distributions")
    study.add_argument("--env", default="simple_env", choices=["simple_env", "pendulum"])
    study.add_argument("--alphas", type=float, nargs="+", default=[0.1, 0.2, 0.25])
    study.add_argument("--depth", type=int, default=20)
    study.add_argument("--samples", type=int, default=100_000)
    study.add_argument("--policy", default="random", choices=["random", "deterministic", "planner"])
    study.add_argument("--seed", type=int, default=0)
    study.add_argument("--out", default="results")
    study.set_defaults(func=cmd_study)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
