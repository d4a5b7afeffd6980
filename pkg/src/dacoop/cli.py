"""Command-line entry point: ``dacoop train|eval|replay|compare``.

Exit codes: 0 success, 2 bad input (config, arena, CSV, checkpoint file),
3 numeric failure during training, 4 incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from dacoop import harness, nn
from dacoop.baselines import METHODS
from dacoop.config import ConfigError, RunConfig, load_config, resolve_arena
from dacoop.geometry import ArenaFormatError, SpawnError
from dacoop.trainer import NumericFailure

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INCOMPATIBLE = 0, 2, 3, 4

log = logging.getLogger("dacoop")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dacoop", description="Multi-pursuer pursuit with APF-guided D3QN.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one method with one seed")
    t.add_argument("config", help="config file path or bundled profile name (desk, full, sanity)")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--method", choices=METHODS, help="override the config method")
    t.add_argument("--output", help="override output_dir")

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint or an APF rule")
    e.add_argument("policy", help="checkpoint path, or apf:ETA,LAMBDA[,fixed|scheduled]")
    e.add_argument("--config", default="desk", help="scenario defaults (path or profile)")
    e.add_argument("--arena", type=_str_list, help="arena name(s) or path(s), comma separated")
    e.add_argument("--pursuers", type=_int_list, help="pursuer count(s), comma separated")
    e.add_argument("--episodes", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--method", choices=METHODS[:2], help="adapter to use instead of the one in the checkpoint")
    e.add_argument("--json", dest="json_out", help="write the result table as JSON here")
    e.add_argument("--trajectory", help="write the first evaluation episode of the first cell as CSV")

    r = sub.add_parser("replay", help="render a trajectory CSV to SVG")
    r.add_argument("csv")
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--arena", default="train_fig5a")

    c = sub.add_parser("compare", help="train and evaluate several methods over several seeds")
    c.add_argument("config")
    c.add_argument("--methods", type=_str_list, default=list(METHODS))
    c.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    c.add_argument("--output", help="override output_dir")
    c.add_argument("--workers", type=int, default=1)
    return p


def _setup_logging() -> None:
    level = os.environ.get("DACOOP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load(path: str) -> RunConfig:
    return load_config(path)


def cmd_train(args) -> int:
    cfg = _load(args.config)
    out = Path(args.output or cfg.output_dir)
    summary = harness.train_run(cfg, out, seed=args.seed, method=args.method)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args.config)
    spec = harness.PolicySpec.parse(args.policy, args.method)
    arenas = args.arena or [cfg.arena]
    counts = args.pursuers or [cfg.scenario.n_pursuers]
    rows = harness.eval_sweep(cfg, spec, arenas, counts, args.episodes, args.seed)
    print(f"{'arena':<16}{'N':>4}{'episodes':>10}{'success':>10}{'steps':>10}")
    for row in rows:
        print(f"{row['arena']:<16}{row['n_pursuers']:>4}{row['episodes']:>10}"
              f"{row['success_rate']:>10.3f}{row['mean_steps']:>10.1f}")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(rows, indent=2) + "\n")
    if args.trajectory:
        arena = resolve_arena(arenas[0], Path(cfg.source).parent if cfg.source else None)
        harness.record_trajectory(cfg, spec, arena, counts[0], args.seed, Path(args.trajectory))
    return EXIT_OK


def cmd_replay(args) -> int:
    rows = harness.read_trajectory(Path(args.csv))
    arena = resolve_arena(args.arena)
    Path(args.output).write_text(harness.render_svg(rows, arena))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args.config)
    unknown = [m for m in args.methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {', '.join(unknown)}")
    out = Path(args.output or cfg.output_dir)
    cells = harness.compare(cfg, args.methods, args.seeds, out, workers=args.workers)
    for cell in cells:
        rate = cell["final_success_rate"]
        shown = "-" if rate is None else f"{rate:.3f}"
        print(f"{cell['method']:<14}seed={cell['seed']:<4}final={shown:<7}{cell['status']}")
    failed = [c for c in cells if c["status"] != "ok"]
    return EXIT_OK if not failed else EXIT_NUMERIC


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "replay": cmd_replay, "compare": cmd_compare}


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ArenaFormatError, SpawnError, harness.TrajectoryFormatError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except harness.IncompatibleArtifact as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except nn.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericFailure as exc:
        print(f"numeric failure: {exc} {json.dumps(exc.diagnostics)}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
