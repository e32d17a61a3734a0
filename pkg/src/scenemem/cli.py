"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import ConfigError, ParameterError, ProtocolError
from .harness import (
    ABLATION_COLUMNS,
    STRATEGIES,
    ScenarioConfig,
    ablate_strategies,
    make_training_corpus,
    run_scenario,
    samples_from_manifest,
)
from .io import config_hash, dumps, grid_to_csv, read_map_blocks, write_ppm
from .retrieval import select_greedy_multi_target, select_topk_mean
from .scorer import ScoringCNN, save_checkpoint

logger = logging.getLogger("scenemem")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class UsageError(Exception):
    """Bad input the user can fix; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _default_out() -> str:
    return os.environ.get("SCENEMEM_OUT", "out")


def _read_json(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metadata(seed, cfg_obj, started: float) -> dict:
    return {
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash(cfg_obj),
        "wall_clock": {
            "started_unix": started,
            "elapsed_s": time.time() - started,
        },
    }


def _load_scenario(args) -> ScenarioConfig:
    raw = _read_json(args.scenario)
    if not isinstance(raw, dict):
        raise UsageError(f"{args.scenario}: scenario must be a JSON object")
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "strategy", None) is not None:
        raw["strategy"] = args.strategy
    if getattr(args, "workers", None) is not None:
        raw["workers"] = args.workers
    return ScenarioConfig.from_dict(raw)


def cmd_run(args) -> int:
    started = time.time()
    cfg = _load_scenario(args)
    out = _out_dir(args.out)
    result = run_scenario(cfg, keep_frames=args.dump)
    payload = {"config": cfg.result_dict(), "result": result.to_dict()}
    payload["metadata"] = {
        **_metadata(cfg.seed, cfg.result_dict(), started),
        "workers": cfg.workers,
        "timings_ms": result.timings,
    }
    (out / "results.json").write_text(dumps(payload))
    if result.revisit is not None:
        (out / "revisit.csv").write_text(result.revisit.to_csv())
    if args.dump:
        _dump_frames(out / cfg.digest(), result)
    print(json.dumps(result.summary(), sort_keys=True))
    return EXIT_OK


def _dump_frames(root: Path, result) -> None:
    by_index = {f.index: f for f in result.frames}
    recon = dict(zip(sorted(by_index), result.reconstructions))
    for clip in result.clips:
        d = root / f"clip_{clip['clip']:03d}"
        d.mkdir(parents=True, exist_ok=True)
        lo, hi = clip["frames"]
        for t in range(lo, hi + 1):
            write_ppm(d / f"frame_{t:04d}.ppm", by_index[t].image)
            write_ppm(d / f"recon_{t:04d}.ppm", recon[t])
        (d / "selection.json").write_text(dumps({k: clip[k] for k in ("anchor", "chosen", "gains", "queries")}))


def cmd_ablate(args) -> int:
    started = time.time()
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not strategies:
        raise UsageError("empty strategy list")
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise UsageError(f"unknown strategy {', '.join(bad)}; valid: {', '.join(STRATEGIES)}")
    cfg = _load_scenario(args)
    out = _out_dir(args.out)
    rows = ablate_strategies(cfg, strategies)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        w.writerow([r["strategy"]] + [f"{r[c]:.6f}" for c in ABLATION_COLUMNS[1:]])
    (out / "ablation.csv").write_text(buf.getvalue())
    meta = _metadata(cfg.seed, {"config": cfg.result_dict(), "strategies": strategies}, started)
    meta["workers"] = cfg.workers
    (out / "ablation_meta.json").write_text(dumps({"metadata": meta, "scene_hash": rows[0]["scene_hash"]}))
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_corpus(args) -> int:
    started = time.time()
    scenes = _read_json(args.scenes)
    if isinstance(scenes, dict):
        scenes = [scenes]
    if not isinstance(scenes, list) or not scenes:
        raise UsageError(f"{args.scenes}: expected a scene config or a non-empty list of them")
    manifest, _ = make_training_corpus(scenes, args.samples, args.seed, proj_seed=args.proj_seed)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(manifest))
    meta = _metadata(args.seed, {"scenes": scenes, "samples": args.samples, "proj_seed": args.proj_seed}, started)
    path.with_suffix(".meta.json").write_text(dumps({"metadata": meta, "n_samples": len(manifest)}))
    print(f"wrote {len(manifest)} samples to {path}")
    return EXIT_OK


def cmd_train_scorer(args) -> int:
    started = time.time()
    manifest = _read_json(args.manifest)
    try:
        samples, featurizer = samples_from_manifest(manifest)
    except (ParameterError, ConfigError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.manifest}: corrupt manifest ({exc})") from exc
    if not samples:
        raise UsageError(f"{args.manifest}: manifest holds no samples")
    X = np.stack([s.features for s in samples])
    y = np.stack([s.mse for s in samples])
    model = ScoringCNN(lr=args.lr, batch_size=args.batch, steps=args.steps, seed=args.seed, log_every=args.log_every)
    model.fit(X, y)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, model, featurizer.projection_)
    curve = "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(model.loss_curve_))
    path.with_suffix(".loss.csv").write_text(curve)
    hyper = {"lr": args.lr, "batch": args.batch, "steps": args.steps, "manifest": config_hash(manifest)}
    meta = _metadata(args.seed, hyper, started)
    path.with_suffix(".meta.json").write_text(dumps({"metadata": meta, "n_samples": len(samples)}))
    print(json.dumps({"initial_loss": model.loss_curve_[0], "final_loss": model.loss_curve_[-1]}))
    return EXIT_OK


def cmd_select(args) -> int:
    p = Path(args.maps)
    if not p.is_file():
        raise UsageError(f"no such file: {args.maps}")
    try:
        maps = read_map_blocks(p.read_text())
    except ParameterError as exc:
        raise UsageError(f"{args.maps}: {exc}") from exc
    if not maps:
        raise UsageError(f"{args.maps}: no maps found")
    if len({m.shape for m in maps}) > 1:
        raise UsageError(f"{args.maps}: maps differ in shape")
    stacked = np.stack(maps)[None]
    select = select_greedy_multi_target if args.mode == "greedy" else select_topk_mean
    try:
        res = select(stacked, args.k, include_last=False)
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc
    payload = res.to_dict()
    canvas = np.zeros(maps[0].shape) if res.canvas is None else np.asarray(res.canvas).reshape(maps[0].shape)
    if args.canvas:
        payload["canvas"] = canvas.tolist()
    sys.stdout.write(dumps(payload))
    if args.canvas_csv:
        Path(args.canvas_csv).write_text(grid_to_csv(canvas))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="scenemem", description="View retrieval for scene-consistent generation on a synthetic world.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one strategy on a scenario")
    run.add_argument("scenario")
    run.add_argument("--out", default=_default_out())
    run.add_argument("--seed", type=int)
    run.add_argument("--strategy", choices=STRATEGIES)
    run.add_argument("--workers", type=int)
    run.add_argument("--dump", action="store_true", help="write per-clip PPM frames and selections")
    run.set_defaults(func=cmd_run)

    ab = sub.add_parser("ablate", help="compare strategies on one scenario")
    ab.add_argument("scenario")
    ab.add_argument("--strategies", default=",".join(STRATEGIES))
    ab.add_argument("--out", default=_default_out())
    ab.add_argument("--seed", type=int)
    ab.add_argument("--workers", type=int)
    ab.set_defaults(func=cmd_ablate)

    co = sub.add_parser("corpus", help="draw a scorer training manifest")
    co.add_argument("scenes", help="JSON scene config or list of configs")
    co.add_argument("--samples", type=int, default=50, help="samples per scene")
    co.add_argument("--seed", type=int, default=0)
    co.add_argument("--proj-seed", type=int, default=0)
    co.add_argument("--out", default=str(Path(_default_out()) / "manifest.json"))
    co.set_defaults(func=cmd_corpus)

    tr = sub.add_parser("train-scorer", help="fit the scoring CNN")
    tr.add_argument("manifest")
    tr.add_argument("--out", default=str(Path(_default_out()) / "model.bin"))
    tr.add_argument("--lr", type=float, default=5e-5)
    tr.add_argument("--batch", type=int, default=64)
    tr.add_argument("--steps", type=int, default=2000)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--log-every", type=int, default=0)
    tr.set_defaults(func=cmd_train_scorer)

    se = sub.add_parser("select", help="run coverage selection on maps from CSV")
    se.add_argument("--maps", required=True, help="CSV, one map per blank-line separated block")
    se.add_argument("--k", type=int, required=True)
    se.add_argument("--mode", choices=("greedy", "topk"), default="greedy")
    se.add_argument("--canvas", action="store_true", help="include the final canvas in the JSON")
    se.add_argument("--canvas-csv")
    se.set_defaults(func=cmd_select)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"scenemem: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"scenemem: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParameterError, ProtocolError, RuntimeError, OSError, ValueError) as exc:
        print(f"scenemem: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
