"""Command-line entry point.

    kinseg gen       write one synthetic dataset per seed
    kinseg run       one sequence run with per-frame CSV and predicted masks
    kinseg sweep     iteration / window / regularizer sweeps
    kinseg ablate    module ablation grid
    kinseg report    tables, plots and summary from stored results
    kinseg gradcheck finite-difference gradient suite

Exit status: 0 success, 1 usage, 2 configuration, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, save_config
from .evaluate import RunRecord, SweepResult, ablate, sweep_k, sweep_lambda1, sweep_lambda2, sweep_n
from .report import FRAME_HEADER, _csv_text, emit_report, frame_rows, load_frames, run_frames_csv
from .renderer import write_pgm
from .synth import generate, load_dataset, save_dataset, spec_dict

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("gen", "run", "sweep", "ablate", "report", "gradcheck")
CONFIG_NAME = "config.cfg"
RUN_DIR = re.compile(r"run_seed_(\d+)")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--workdir", default=".", help="root for data, results and report paths")
    common.add_argument("--config", help="configuration file (section.key = value lines)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config value")
    parser = _Parser(prog="kinseg", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="write synthetic datasets")
    run = sub.add_parser("run", parents=[common], help="run the pipeline on one dataset")
    run.add_argument("--seed", type=int, help="dataset seed (default: first configured seed)")
    sub.add_parser("sweep", parents=[common], help="sweep the configured axes")
    sub.add_parser("ablate", parents=[common], help="module ablation grid")
    sub.add_parser("report", parents=[common], help="emit tables and plots from results")
    grad = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    grad.add_argument("--configs", type=int, default=10, help="random composite configurations")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(args.overrides)


def _dir(workdir: Path, cfg: ExperimentConfig, key: str) -> Path:
    return workdir / cfg[f"paths.{key}"]


def dataset_dir(workdir: Path, cfg: ExperimentConfig, seed: int) -> Path:
    return _dir(workdir, cfg, "data") / f"seed_{seed:03d}"


def _manifest(cfg: ExperimentConfig, seed: int) -> dict:
    cam = cfg.camera()
    return {
        "seed": seed,
        "trajectory": spec_dict(cfg.trajectory(seed)),
        "noise": spec_dict(cfg.noise(seed)),
        "domain": spec_dict(cfg.domain()),
        "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                   "width": cam.width, "height": cam.height, "pose": list(map(float, cam.pose))},
        "arms": [{"name": a.name, "has_jaw": a.has_jaw,
                  "links": [spec_dict(lk) for lk in a.links]} for a in cfg.arms()],
        "bases_true": cfg.bases_true().tolist(),
        "synth": cfg.generator_kwargs(),
    }


def cmd_gen(cfg: ExperimentConfig, workdir: Path, args) -> int:
    for seed in cfg.seeds:
        ds = generate(cfg.trajectory(seed), cfg.noise(seed), cfg.domain(), cfg.camera(), cfg.arms(),
                      cfg.bases_true(), manifest=_manifest(cfg, seed), **cfg.generator_kwargs())
        root = dataset_dir(workdir, cfg, seed)
        save_dataset(ds, root)
        save_config(cfg, root / CONFIG_NAME)
        print(f"wrote {len(ds)} frames to {root}")
    return EXIT_OK


def _bench(cfg: ExperimentConfig, workdir: Path, seeds):
    bench = {}
    for seed in seeds:
        ds = load_dataset(dataset_dir(workdir, cfg, seed))
        bench[seed] = (ds, cfg.scene(ds.background))
    return bench


def cmd_run(cfg: ExperimentConfig, workdir: Path, args) -> int:
    from .pipeline import run_sequence

    seed = args.seed if args.seed is not None else cfg.seeds[0]
    ds = load_dataset(dataset_dir(workdir, cfg, seed))
    results = run_sequence(ds, cfg.pipeline(), cfg.scene(ds.background),
                           record_time=cfg["experiment.record_time"])
    out = _dir(workdir, cfg, "results") / f"run_seed_{seed:03d}"
    (out / "masks").mkdir(parents=True, exist_ok=True)
    record = RunRecord.from_results("run", cfg["pipeline.k"], seed, results)
    (out / "frames.csv").write_text(run_frames_csv(record), encoding="utf-8")
    for r in results:
        write_pgm(out / "masks" / f"{r.frame:06d}.pgm", r.mask)
    save_config(cfg, out / CONFIG_NAME)
    print(f"seed {seed}: mean Dice {np.mean(record.columns['dice']):.4f} over {len(results)} "
          f"frames -> {out}")
    return EXIT_OK


def _store(res: SweepResult, cfg: ExperimentConfig, workdir: Path) -> Path:
    out = _dir(workdir, cfg, "results") / res.name
    out.mkdir(parents=True, exist_ok=True)
    (out / "frames.csv").write_text(_csv_text(FRAME_HEADER, frame_rows(res)), encoding="utf-8")
    save_config(cfg, out / CONFIG_NAME)
    return out


def cmd_sweep(cfg: ExperimentConfig, workdir: Path, args) -> int:
    seeds = cfg.seeds
    bench = _bench(cfg, workdir, seeds)
    base = cfg.pipeline()
    kw = dict(workers=cfg["experiment.workers"], record_time=cfg["experiment.record_time"])
    for axis in dict.fromkeys(cfg["sweep.axes"]):
        if axis == "k":
            res = sweep_k(bench, base, cfg["sweep.k_values"], seeds,
                          baseline=cfg["sweep.baseline"], **kw)
        elif axis == "n":
            res = sweep_n(bench, base, seeds, cfg["sweep.n_values"], **kw)
        elif axis == "lambda1":
            res = sweep_lambda1(bench, base, seeds, cfg["sweep.lambda1_values"],
                                lambda2=cfg["pipeline.lambda2"], **kw)
        else:
            res = sweep_lambda2(bench, base, seeds, cfg["sweep.lambda2_values"],
                                lambda1=cfg["pipeline.lambda1"], **kw)
        print(f"{res.name}: {len(res.records)} runs -> {_store(res, cfg, workdir)}")
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig, workdir: Path, args) -> int:
    seeds = cfg.seeds
    res = ablate(_bench(cfg, workdir, seeds), cfg.pipeline(), seeds, cfg["ablate.k_values"],
                 workers=cfg["experiment.workers"], record_time=cfg["experiment.record_time"])
    print(f"ablation: {len(res.records)} runs -> {_store(res, cfg, workdir)}")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, workdir: Path, args) -> int:
    root = _dir(workdir, cfg, "results")
    if not root.is_dir():
        raise FileNotFoundError(f"no results directory at {root}; run 'run', 'sweep' or 'ablate' first")
    results = []
    for path in sorted(root.glob("*/frames.csv")):
        run = RUN_DIR.fullmatch(path.parent.name)
        if run is None:
            results.append(load_frames(path))
            continue
        echo = path.parent / CONFIG_NAME
        k = load_config(echo)["pipeline.k"] if echo.exists() else 0
        results.append(load_frames(path, seed=int(run.group(1)), value=k))
    out = _dir(workdir, cfg, "report")
    written = emit_report(results, out)
    save_config(cfg, out / CONFIG_NAME)
    print(f"report: {len(written)} files from {len(results)} result sets -> {out}")
    return EXIT_OK


def cmd_gradcheck(cfg: ExperimentConfig, workdir: Path, args) -> int:
    from .gradcheck import run_suite

    results = run_suite(configs=args.configs, verbose=True)
    return EXIT_OK if all(r.ok for r in results) else EXIT_RUNTIME


HANDLERS = {"gen": cmd_gen, "run": cmd_run, "sweep": cmd_sweep, "ablate": cmd_ablate,
            "report": cmd_report, "gradcheck": cmd_gradcheck}


def dispatch(command: str, cfg: ExperimentConfig, workdir, args=None) -> int:
    if command not in HANDLERS:
        raise UsageError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    return HANDLERS[command](cfg, Path(workdir), args or argparse.Namespace(seed=None, configs=10))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("kinseg: error: a command is required: " + ", ".join(COMMANDS))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return dispatch(args.command, cfg, args.workdir, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
