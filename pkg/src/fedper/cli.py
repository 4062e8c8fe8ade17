"""Command-line entry point: run one federation, sweep an axis, or write a
partition manifest.  Exit codes: 0 ok, 1 runtime error, 2 usage error."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import apply_overrides, build_dataset, default_config, echo_config, load_config_file, resolve
from .data import K_CLASS, partition_indices
from .errors import ConfigError, SimulationError, UsageError
from .experiment import SWEEP_AXES, run_experiment, run_sweep
from .metrics import emit
from .model import linearize_base
from .protocol import RunConfig, write_checkpoint

ENV_OUT_DIR = "FEDPER_OUT_DIR"


def _load(args) -> dict:
    cfg = load_config_file(args.config) if args.config else default_config()
    cfg = apply_overrides(cfg, args.set or [])
    if getattr(args, "seed", None) is not None:
        cfg["master_seed"] = args.seed
    return cfg


def _out_dir(args, resolved) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if resolved.output["dir"]:
        return Path(resolved.output["dir"])
    root = os.environ.get(ENV_OUT_DIR, "out")
    return Path(root) / resolved.output["run_id"]


def _effective_run_config(resolved) -> RunConfig:
    cfg = resolved.run_config()
    if resolved.ablation == "linear_base":
        cfg = replace(cfg, spec=linearize_base(cfg.spec))
    return cfg


def cmd_run(args) -> int:
    resolved = resolve(_load(args))
    ds = build_dataset(resolved.dataset)
    if resolved.spec.in_dim != ds.samples[0].x.shape[0]:
        raise ConfigError(
            f"model input dim {resolved.spec.in_dim} != dataset feature dim {ds.samples[0].x.shape[0]}"
        )
    run_cfg = _effective_run_config(resolved)

    out_dir = _out_dir(args, resolved)
    run_id = resolved.output["run_id"]
    result = run_experiment(
        run_cfg,
        ds,
        threads=args.threads,
        checkpoint_dir=out_dir / "checkpoints",
        checkpoint_every=resolved.output["checkpoint_every"],
    )

    fmt = resolved.output["format"]
    emit(result.history, fmt, out_dir / f"{run_id}_history.{fmt}")
    write_checkpoint(out_dir / "checkpoints", "final", result.server, result.clients)
    echo_config(resolved, out_dir / f"{run_id}_config.json")
    print(f"wrote {out_dir / f'{run_id}_history.{fmt}'}")
    return 0


def cmd_sweep(args) -> int:
    resolved = resolve(_load(args))
    ds = build_dataset(resolved.dataset)
    run_cfg = _effective_run_config(resolved)

    values: list[int | str]
    if args.axis == "algorithm":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
    else:
        try:
            values = [int(v) for v in args.values.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"--values for axis {args.axis} must be integers: {exc}") from exc

    out_dir = _out_dir(args, resolved)
    run_id = resolved.output["run_id"]
    sweep = run_sweep(run_cfg, ds, args.axis, values, threads=args.threads)

    fmt = resolved.output["format"]
    for point in sweep.points:
        emit(point.history, fmt, out_dir / f"{run_id}_{args.axis}_{point.value}.{fmt}")
    echo_config(resolved, out_dir / f"{run_id}_config.json")
    print(f"wrote {len(sweep.points)} result file(s) under {out_dir}")
    return 0


def cmd_partition(args) -> int:
    resolved = resolve(_load(args))
    ds = build_dataset(resolved.dataset)
    spec = resolved.partition
    indices = partition_indices(ds, spec)
    labels = ds.labels
    manifest = {
        "mode": spec.mode,
        "num_clients": spec.num_clients,
        "k": spec.k if spec.mode == K_CLASS else None,
        "volume_range": None if spec.mode == K_CLASS else list(spec.volume_range),
        "seed": spec.seed,
        "num_classes": ds.num_classes,
        "clients": [
            {
                "id": j,
                "size": len(idx),
                "classes": sorted({int(labels[i]) for i in idx}),
                "indices": idx,
            }
            for j, idx in enumerate(indices)
        ],
    }
    out_path = Path(args.out) if args.out else _out_dir(args, resolved) / "partition_manifest.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedper", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults used if omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", help="output directory (file path for partition)")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--threads", type=int, default=1, help="client-level parallelism")

    p_run = sub.add_parser("run", help="run one federation")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="re-run across one axis")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_part = sub.add_parser("partition", help="write the partition manifest only")
    common(p_part)
    p_part.set_defaults(func=cmd_partition)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())
