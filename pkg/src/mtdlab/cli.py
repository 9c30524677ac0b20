"""Command-line front end tying the pipeline together.

Subcommands: parse-perf, feature-select, make-world, ad-train, ad-eval,
train, eval. Every run writes a manifest JSON with the fully resolved
configuration, the seed, and input/output hashes, so a run can be reproduced
exactly. All randomness flows from the manifest seed through named
substreams.

Exit codes: 0 ok, 2 data error, 64 usage error.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agent import AgentConfig, DqnAgent
from .detector import (
    DetectorConfig,
    calibrate_threshold,
    load_detector,
    save_detector,
    train_autoencoder,
)
from .env import NORMAL, DatasetEnv, SimWorld, default_world, sample_rows
from .errors import DataError
from .fingerprint import FeatureSchema, default_schema, select_features
from .ingest import load_dataset, parse_perf_intervals, save_dataset, window_aggregate
from .orchestrator import (
    evaluate_detector,
    evaluate_policy,
    format_detector_table,
    format_policy_table,
    train,
    write_detector_csv,
    write_metrics_csv,
    write_policy_csv,
)

EXIT_OK = 0
EXIT_DATA = 2
EXIT_USAGE = 64

MANIFEST_FORMAT_VERSION = 1


class UsageError(Exception):
    """Bad flag combination or value; maps to exit code 64."""


def substream(seed: int, label: str) -> np.random.Generator:
    """Named child stream of the manifest seed; changing one label changes
    only that stream's consumers."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command: str, seed, config: dict, inputs: dict, outputs: dict) -> None:
    doc = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "tool": {"name": "mtdlab", "version": __version__},
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()},
        "outputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in outputs.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_schema(path) -> FeatureSchema:
    return FeatureSchema.load(path) if path else default_schema()


def _load_world(args) -> SimWorld:
    if getattr(args, "world", None) and getattr(args, "default_world", False):
        raise UsageError("give either --world or --default-world, not both")
    if getattr(args, "world", None):
        return SimWorld.load(args.world)
    if getattr(args, "default_world", False):
        schema = _load_schema(getattr(args, "schema", None))
        return default_world(schema, args.seed)
    raise UsageError("a world is required: --world PATH or --default-world")


# ---------------------------------------------------------------- parse-perf


def cmd_parse_perf(args) -> int:
    if args.window <= 0:
        raise UsageError("--window must be positive")
    with open(args.input, "rb") as fh:
        samples = parse_perf_intervals(fh.read())
    if not samples:
        raise DataError(f"{args.input}: no samples")
    schema = _load_schema(args.schema)
    rows, dropped = window_aggregate(samples, schema, args.window, zero_fill=args.zero_fill)
    for d in dropped:
        print(f"dropped window {d.index}: missing {', '.join(d.missing_events)}", file=sys.stderr)
    save_dataset(args.output, schema, rows)
    inputs = {"perf": args.input}
    if args.schema:
        inputs["schema"] = args.schema
    _write_manifest(
        str(args.output) + ".manifest.json",
        "parse-perf",
        None,
        {"window": args.window, "zero_fill": args.zero_fill},
        inputs,
        {"dataset": args.output},
    )
    print(f"wrote {args.output}: {rows.shape[0]} windows, {len(dropped)} dropped")
    return EXIT_OK


# ------------------------------------------------------------ feature-select


def cmd_feature_select(args) -> int:
    if not 0.0 < args.corr < 1.0:
        raise UsageError("--corr must lie in (0, 1)")
    schema, rows = load_dataset(args.dataset)
    if args.schema:
        full = FeatureSchema.load(args.schema)
        if full.names != schema.names:
            raise DataError(f"{args.schema}: schema names do not match dataset header")
        schema = full
    reduced, removals = select_features(schema, rows, args.corr, args.instability_factor)
    for r in removals:
        print(f"removed {r.name}: {r.reason} ({r.detail})", file=sys.stderr)
    reduced.save(args.out_schema)
    _write_manifest(
        str(args.out_schema) + ".manifest.json",
        "feature-select",
        None,
        {"corr": args.corr, "instability_factor": args.instability_factor},
        {"dataset": args.dataset},
        {"schema": args.out_schema},
    )
    print(f"kept {len(reduced)} of {len(schema)} features; wrote {args.out_schema}")
    return EXIT_OK


# ---------------------------------------------------------------- make-world


def _parse_overlap(pairs) -> dict:
    overlap = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--overlap expects LABEL=VALUE, got {pair!r}")
        label, value = pair.split("=", 1)
        try:
            overlap[label] = float(value)
        except ValueError:
            raise UsageError(f"--overlap value for {label!r} is not a number") from None
    return overlap


def cmd_make_world(args) -> int:
    schema = _load_schema(args.schema)
    world = default_world(
        schema,
        args.seed,
        overlap=_parse_overlap(args.overlap),
        attack_prob=args.attack_prob,
        attack_distance=args.attack_distance,
        afterstate_distance=args.afterstate_distance,
    )
    world.save(args.output)
    _write_manifest(
        str(args.output) + ".manifest.json",
        "make-world",
        args.seed,
        {
            "attack_prob": args.attack_prob,
            "attack_distance": args.attack_distance,
            "afterstate_distance": args.afterstate_distance,
            "overlap": _parse_overlap(args.overlap),
        },
        {"schema": args.schema} if args.schema else {},
        {"world": args.output},
    )
    print(f"wrote {args.output}: {len(world.profiles)} profiles")
    return EXIT_OK


# ------------------------------------------------------------------ ad-train


def _detector_config(args) -> DetectorConfig:
    try:
        return DetectorConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.learning_rate,
            momentum=args.momentum,
            train_fraction=args.train_fraction,
            z_max=args.z_max,
            threshold_std_multiplier=args.tau_multiplier,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_ad_train(args) -> int:
    if bool(args.dataset) == bool(args.world or args.default_world):
        raise UsageError("give a normal dataset (--dataset) or a world to sample it from, not both")
    config = _detector_config(args)
    inputs = {}
    if args.dataset:
        schema, rows = load_dataset(args.dataset)
        inputs["dataset"] = args.dataset
    else:
        world = _load_world(args)
        schema = world.schema or default_schema()
        rows = sample_rows(world, NORMAL, args.samples, substream(args.seed, "detector-data"))
        if args.world:
            inputs["world"] = args.world
    result = train_autoencoder(rows, schema, config, substream(args.seed, "detector"))
    tau = calibrate_threshold(result.model, result.heldout, config.threshold_std_multiplier)
    save_detector(args.output, result.model)
    _write_manifest(
        str(args.output) + ".manifest.json",
        "ad-train",
        args.seed,
        {"detector": config.to_dict(), "samples": args.samples if not args.dataset else None},
        inputs,
        {"model": args.output},
    )
    final = result.losses[-1] if result.losses else float("nan")
    print(f"wrote {args.output}: tau={tau:.6g}, final epoch loss={final:.6g}, outliers dropped={result.outliers_dropped}")
    return EXIT_OK


# ------------------------------------------------------------------- ad-eval


def _parse_labeled_datasets(pairs) -> dict:
    datasets = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--data expects LABEL=CSV, got {pair!r}")
        label, path = pair.split("=", 1)
        _, rows = load_dataset(path)
        datasets[label] = rows
    return datasets


def cmd_ad_eval(args) -> int:
    if args.n_per_behavior < 1:
        raise UsageError("--n-per-behavior must be >= 1")
    model = load_detector(args.model)
    if args.data:
        env = DatasetEnv(_parse_labeled_datasets(args.data))
        inputs = {"model": args.model}
    else:
        world = _load_world(args)
        env = world
        inputs = {"model": args.model}
        if args.world:
            inputs["world"] = args.world
    rows = evaluate_detector(env, model, args.n_per_behavior, substream(args.seed, "eval"))
    write_detector_csv(args.output, rows)
    text_path = str(args.output) + ".txt"
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(format_detector_table(rows))
    _write_manifest(
        str(args.output) + ".manifest.json",
        "ad-eval",
        args.seed,
        {"n_per_behavior": args.n_per_behavior},
        inputs,
        {"table": args.output, "table_text": text_path},
    )
    print(format_detector_table(rows), end="")
    return EXIT_OK


# --------------------------------------------------------------------- train


def _agent_config(args, state_dim: int, overrides: dict) -> AgentConfig:
    doc = AgentConfig(state_dim=state_dim, seed=args.seed).to_dict()
    doc.update(overrides)
    for flag in ("gamma", "batch_size", "update_freq", "max_steps", "learning_rate"):
        value = getattr(args, flag, None)
        if value is not None:
            doc[flag] = value
    doc["state_dim"] = state_dim
    doc["seed"] = args.seed
    try:
        return AgentConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad agent configuration: {exc}") from None


def _read_config_file(path) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return doc


def cmd_train(args) -> int:
    file_config = _read_config_file(args.config)
    if args.seed is None:
        args.seed = file_config.get("seed", 0)
    if args.episodes is None:
        args.episodes = file_config.get("episodes", AgentConfig().max_episodes)
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    if not args.world and "world" in file_config:
        args.world = file_config["world"]
    if not args.detector and "detector_model" in file_config:
        args.detector = file_config["detector_model"]
    if not args.detector:
        raise UsageError("a calibrated detector model is required (--detector)")

    world = _load_world(args)
    model = load_detector(args.detector)
    dim = len(model.schema)
    if len(next(iter(world.profiles.values())).mean) != dim:
        raise DataError("world profile dimension does not match the detector schema")
    if not model.calibrated:
        raise DataError(f"{args.detector}: detector model is not calibrated")

    config = _agent_config(args, dim, file_config.get("agent", {}))
    agent = DqnAgent(
        config,
        rng=substream(args.seed, "exploration"),
        init_rng=substream(args.seed, "agent-init"),
    )
    metrics = train(world, model, agent, args.episodes, substream(args.seed, "env"))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    checkpoint_path = out / "agent.json"
    write_metrics_csv(metrics_path, metrics)
    agent.save(checkpoint_path)
    inputs = {"detector": args.detector}
    if args.world:
        inputs["world"] = args.world
    _write_manifest(
        out / "manifest.json",
        "train",
        args.seed,
        {"episodes": args.episodes, "agent": config.to_dict(), "world": args.world or "default"},
        inputs,
        {"metrics": metrics_path, "checkpoint": checkpoint_path},
    )
    print(f"training took {metrics.duration_s:.1f}s", file=sys.stderr)
    print(
        f"wrote {metrics_path}: {args.episodes} episodes "
        f"({len(metrics.records)} rounds), {metrics.learn_updates} updates, "
        f"final moving-average reward {metrics.final_moving_avg:.3f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    file_config = _read_config_file(args.config)
    if args.seed is None:
        args.seed = file_config.get("seed", 0)
    if not args.world and "world" in file_config:
        args.world = file_config["world"]
    if args.n_per_behavior < 1:
        raise UsageError("--n-per-behavior must be >= 1")
    world = _load_world(args)
    agent = DqnAgent.load(args.checkpoint)
    rows = evaluate_policy(world, agent.greedy_policy(), args.n_per_behavior, substream(args.seed, "eval"))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "agent_accuracy.csv"
    text_path = out / "agent_accuracy.txt"
    write_policy_csv(csv_path, rows)
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(format_policy_table(rows))
    inputs = {"checkpoint": args.checkpoint}
    if args.world:
        inputs["world"] = args.world
    _write_manifest(
        out / "manifest.json",
        "eval",
        args.seed,
        {"n_per_behavior": args.n_per_behavior, "world": args.world or "default"},
        inputs,
        {"table": csv_path, "table_text": text_path},
    )
    print(format_policy_table(rows), end="")
    return EXIT_OK


# -------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_world_flags(p, with_schema: bool = True) -> None:
    p.add_argument("--world", help="world JSON produced by make-world")
    p.add_argument("--default-world", action="store_true", help="build the default synthetic world from the seed")
    if with_schema:
        p.add_argument("--schema", help="feature schema JSON (default: built-in 46-feature schema)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtdlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"mtdlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse-perf", parents=[], help="profiler interval output to dataset CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", help="feature schema JSON (default: built-in)")
    p.add_argument("--window", type=float, default=5.0, help="window length in seconds")
    p.add_argument("--zero-fill", action="store_true", help="fill missing events with 0 instead of dropping windows")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_parse_perf)

    p = sub.add_parser("feature-select", help="prune constant/unstable/correlated features")
    p.add_argument("--dataset", required=True)
    p.add_argument("--schema", help="schema JSON carrying family tags for the dataset")
    p.add_argument("--corr", type=float, default=0.9, help="absolute Pearson correlation threshold")
    p.add_argument("--instability-factor", type=float, default=5.0)
    p.add_argument("--out-schema", required=True)
    p.set_defaults(func=cmd_feature_select)

    p = sub.add_parser("make-world", help="emit a synthetic world JSON")
    p.add_argument("--schema")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attack-prob", type=float, default=0.2)
    p.add_argument("--attack-distance", type=float, default=14.0)
    p.add_argument("--afterstate-distance", type=float, default=2.0)
    p.add_argument("--overlap", action="append", metavar="LABEL=VALUE", help="per-attack overlap knob override")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_make_world)

    p = sub.add_parser("ad-train", help="train and calibrate the anomaly detector")
    p.add_argument("--dataset", help="normal-behavior dataset CSV")
    _add_world_flags(p, with_schema=False)
    p.add_argument("--schema", help="feature schema JSON (with --default-world)")
    p.add_argument("--samples", type=int, default=3000, help="normal rows to sample when training from a world")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--z-max", type=float, default=3.0)
    p.add_argument("--tau-multiplier", type=float, default=2.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_ad_train)

    p = sub.add_parser("ad-eval", help="detector accuracy per behavior (states and afterstates)")
    p.add_argument("--model", required=True)
    _add_world_flags(p)
    p.add_argument("--data", action="append", metavar="LABEL=CSV", help="recorded dataset for one behavior label")
    p.add_argument("--n-per-behavior", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="accuracy table CSV; a .txt twin is written next to it")
    p.set_defaults(func=cmd_ad_eval)

    p = sub.add_parser("train", help="online agent training")
    p.add_argument("--config", help="run config JSON; flags override its fields")
    _add_world_flags(p)
    p.add_argument("--detector", help="calibrated detector model JSON")
    p.add_argument("--episodes", type=int, default=None, help="triggered episodes to run (default 10000)")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--update-freq", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy-policy accuracy per behavior")
    p.add_argument("--config", help="run config JSON; flags override its fields")
    _add_world_flags(p)
    p.add_argument("--checkpoint", required=True, help="agent checkpoint JSON from train")
    p.add_argument("--n-per-behavior", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse --help / usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"mtdlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"mtdlab: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
