"""Command-line entry point ``mtbi-dmri``.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 internal
error. Failures print a JSON error record on stderr and, when an output
directory is known, write it to ``error.json`` there.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import traceback
from pathlib import Path

import yaml

from . import __version__
from .core import MtbiError
from .ingest import read_manifest, validate_dataset
from .pipeline import ConfigError, RunConfig, run_features, run_histograms, run_select
from .synthetic import PhantomSpec, generate_phantom, mean_difference_spec, texture_spec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
THREADS_ENV = "MTBI_DMRI_THREADS"
PRESETS = {"texture": texture_spec, "mean-difference": mean_difference_spec}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_run_args(p):
    p.add_argument("--config", help="YAML/JSON run configuration")
    p.add_argument("--dataset", help="manifest path (overrides config)")
    p.add_argument("--output", help="output directory (overrides config)")
    p.add_argument("--approach", choices=["roi-means", "bow", "both"])
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a nested config value, e.g. svm.C=10")


def build_parser():
    parser = _Parser(prog="mtbi-dmri", description="MTBI vs control classification from diffusion MRI maps")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a dataset manifest and its volumes")
    p.add_argument("dataset")
    p.add_argument("--metrics", nargs="*", help="metrics the run needs")

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("spec", nargs="?", help="phantom spec file (YAML/JSON)")
    p.add_argument("out_dir")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)

    for name, text in (
        ("features", "write feature tables"),
        ("select", "run greedy feature selection"),
        ("histograms", "write per-subject word histograms"),
    ):
        p = sub.add_parser(name, help=text)
        _add_run_args(p)
        if name == "histograms":
            p.add_argument("--subjects", nargs="+", required=True)
    return parser


def _threads(args, cfg) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    if cfg.raw.get("threads"):
        return max(1, int(cfg.raw["threads"]))
    env = os.environ.get(THREADS_ENV)
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"{THREADS_ENV}={env!r} is not an integer") from None


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config, overrides=args.set, base_dir=None if args.config else Path.cwd())
    # flag paths are relative to the working directory, not the config file
    for key in ("dataset", "output"):
        if getattr(args, key) is not None:
            cfg.raw[key] = str(Path(getattr(args, key)).resolve())
    for key in ("approach", "seed"):
        if getattr(args, key) is not None:
            cfg.raw[key] = getattr(args, key)
    cfg.check()
    return cfg


def _write_run_manifest(out_dir, command, cfg, threads):
    record = {
        "command": command,
        "tool_version": __version__,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "threads": threads,
        "config": cfg.raw,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(Path(out_dir) / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dispatch(args, state) -> int:
    if args.command == "validate":
        manifest = read_manifest(args.dataset)
        report = validate_dataset(manifest, args.metrics)
        for issue in report:
            print(issue)
        if report:
            print(f"{len(report)} issue(s)", file=sys.stderr)
            return EXIT_DATA
        print(f"ok: {len(manifest)} subjects")
        return EXIT_OK

    if args.command == "phantom":
        state["out"] = args.out_dir
        if args.preset:
            spec = PRESETS[args.preset]()
        elif args.spec:
            try:
                with open(args.spec, encoding="utf-8") as fh:
                    spec = PhantomSpec.from_dict(yaml.safe_load(fh) or {})
            except (OSError, yaml.YAMLError, TypeError) as exc:
                raise UsageError(f"cannot read phantom spec: {exc}") from exc
        else:
            raise UsageError("give a spec file or --preset")
        if args.seed is not None:
            spec.seed = args.seed
        manifest = generate_phantom(spec, args.out_dir)
        print(manifest)
        return EXIT_OK

    cfg = _run_config(args)
    threads = _threads(args, cfg)
    out = Path(cfg.raw["output"])
    state["out"] = out
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "features":
        for a, p in run_features(cfg, out).items():
            print(f"{a}: {p}")
    elif args.command == "select":
        for a, trace in run_select(cfg, out, threads).items():
            print(f"{a}: {len(trace.subset)} features, CV accuracy {trace.accuracy:.4f}")
    else:
        for p in run_histograms(cfg, out, args.subjects):
            print(p)
    _write_run_manifest(out, args.command, cfg, threads)
    return EXIT_OK


def _fail(code, kind, message, state):
    record = {"error": kind, "message": message, "exit_code": code}
    print(json.dumps(record), file=sys.stderr)
    out = state.get("out")
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            with open(Path(out) / "error.json", "w", encoding="utf-8") as fh:
                json.dump(record, fh, indent=2)
                fh.write("\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    state = {}
    try:
        args = build_parser().parse_args(argv)
        return _dispatch(args, state)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc), state)
    except MtbiError as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc), state)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        traceback.print_exc()
        return _fail(EXIT_INTERNAL, type(exc).__name__, str(exc), state)


if __name__ == "__main__":
    sys.exit(main())
