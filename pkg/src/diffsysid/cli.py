"""Command-line entry point: ``diffsysid [--config F] [--output D] [--seed S] <command>``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import report as reporting
from .cmaes import cma_identify
from .config import ScenarioConfig, load_config
from .errors import (
    ConfigError,
    DivergenceError,
    FormatError,
    NonConvergedError,
    NonFiniteGradientError,
    NonPhysicalError,
    SingularJacobianError,
    TooShortError,
)
from .footqp import foot_height_qp, process_trajectory
from .gradients import evaluate, fd_gradient, gradient_error
from .identify import FragmentSampler, mass_floor, one_stage_identify, two_stage_identify
from .model import ModelParams, State
from .trajectory import (
    NoiseSpec,
    Trajectory,
    excitation_actions,
    generate_real,
    load_trajectory,
    project_params,
    save_trajectory,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4
MODES = ("two-stage", "one-stage", "cma-es")


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    if args.output:
        return Path(args.output)
    if cfg.output_dir is not None:
        return cfg.output_dir
    return Path("runs") / cfg.name


def _config(args) -> ScenarioConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def _noise_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


# -- generate / process ------------------------------------------------------


def generate_scenario(cfg: ScenarioConfig) -> dict[str, Trajectory]:
    """Unloaded and loaded trajectory sets of a scenario, keyed by file stem."""
    model = cfg.model()
    initial = None
    center = None
    if cfg.stance.pose is not None:
        center = foot_height_qp(model, np.array(cfg.stance.pose)).q
        initial = State(center, np.zeros(model.n_joints))
    out = {}
    runs = [("unloaded", False, v) for v in cfg.excitation.unloaded_variants]
    runs += [("loaded", True, v) for v in cfg.excitation.loaded_variants]
    counters = {"unloaded": 0, "loaded": 0}
    for index, (kind, loaded, variant) in enumerate(runs):
        actions = excitation_actions(model, cfg.excitation.duration, cfg.excitation.profile, variant=variant, center=center)
        noise = NoiseSpec(cfg.noise.encoder_std, cfg.noise.encoder_bias_range, _noise_seed(cfg.seed, index))
        stance = cfg.stance.schedule(len(actions) + 1, model.control_dt)
        meta = {"scenario": cfg.name, "variant": str(variant), "profile": cfg.excitation.profile, "seed": str(cfg.seed)}
        out[f"{kind}_{counters[kind]}"] = generate_real(
            model, cfg.perturbation, actions, noise, loaded=loaded, initial=initial, meta=meta, stance=stance
        )
        counters[kind] += 1
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_generate(args) -> int:
    cfg = _config(args)
    model = cfg.model()
    data = _out_dir(args, cfg) / "data"
    data.mkdir(parents=True, exist_ok=True)
    trajs = generate_scenario(cfg)
    for stem, traj in trajs.items():
        save_trajectory(traj, data / f"{stem}.csv")
    truth = {
        "scenario": cfg.name,
        "perturbation": cfg.perturbation.to_dict(),
        "unloaded": cfg.perturbation.truth(model, loaded=False).as_dict(),
        "loaded": cfg.perturbation.truth(model, loaded=True).as_dict(),
    }
    _write_json(data / "ground_truth.json", truth)
    print(f"wrote {len(trajs)} trajectories to {data}")
    return EXIT_OK


def _load_set(root: Path, sub: str) -> dict[str, Trajectory]:
    folder = root / sub
    files = sorted(folder.glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no trajectories in {folder}")
    return {f.stem: load_trajectory(f) for f in files}


def cmd_process(args) -> int:
    cfg = _config(args)
    model = cfg.model()
    root = _out_dir(args, cfg)
    raw = _load_set(root, "data")
    dest = root / "processed"
    dest.mkdir(parents=True, exist_ok=True)
    for stem, traj in raw.items():
        fixed = process_trajectory(model, traj)
        save_trajectory(fixed, dest / f"{stem}.csv")
        n = int(fixed.stance.sum())
        print(f"{stem}: corrected {n} stance timesteps")
    return EXIT_OK


def _sources(root: Path) -> tuple[list[Trajectory], list[Trajectory]]:
    sub = "processed" if (root / "processed").is_dir() and any((root / "processed").glob("*.csv")) else "data"
    trajs = _load_set(root, sub)
    unloaded = [t for s, t in sorted(trajs.items()) if not t.loaded]
    loaded = [t for s, t in sorted(trajs.items()) if t.loaded]
    return unloaded, loaded


def _truth(root: Path) -> dict:
    path = root / "data" / "ground_truth.json"
    return json.loads(path.read_text(encoding="utf-8")) if path.is_file() else {}


# -- identify -------------------------------------------------------------------


def parse_seeds(text: str | None, default: int) -> list[int]:
    """``"3"`` or ``"1..5"`` (inclusive)."""
    if text is None:
        return [default]
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError as exc:
        raise ConfigError(f"--seeds expects N or A..B, got {text!r}") from exc
    if b < a:
        raise ConfigError(f"--seeds range is empty: {text!r}")
    return list(range(a, b + 1))


def run_identification(cfg: ScenarioConfig, mode: str, unloaded, loaded, seed: int):
    model = cfg.model()
    layout = cfg.layout(model)
    kw = dict(batch_size=cfg.batch_size, horizon=cfg.horizon)
    if mode == "two-stage":
        return list(two_stage_identify(model, unloaded, loaded, cfg.loss, cfg.gd, cfg.gd_stage2, layout=layout, seed=seed, **kw))
    if mode == "one-stage":
        return [one_stage_identify(model, loaded, cfg.loss, cfg.gd, layout=layout, seed=seed, **kw)]
    if mode == "cma-es":
        sampler = FragmentSampler(loaded, cfg.batch_size, cfg.horizon)
        return [cma_identify(model, ModelParams.nominal(layout), sampler, cfg.loss, cfg.cma.with_seed(seed))]
    raise ConfigError(f"unknown mode {mode!r}")


def cmd_identify(args) -> int:
    cfg = _config(args)
    root = _out_dir(args, cfg)
    unloaded, loaded = _sources(root)
    if args.mode == "two-stage" and not unloaded:
        raise ConfigError("two-stage identification needs unloaded trajectories")
    if not loaded:
        raise ConfigError("identification needs loaded trajectories")
    truth = _truth(root).get("loaded", {})
    model = cfg.model()
    layout = cfg.layout(model)
    truth_flat = project_params(ModelParams.from_dict(_full(model), truth), layout).as_dict() if truth else {}
    reports_dir = root / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in parse_seeds(args.seeds, cfg.seed):
        stages = run_identification(cfg, args.mode, unloaded, loaded, seed)
        run = reporting.RunRecord(cfg.name, args.mode, seed, [s.to_dict(include_wall_time=False) for s in stages], truth_flat)
        stem = f"{args.mode}_seed{seed}"
        (reports_dir / f"{stem}.json").write_text(run.to_json(), encoding="utf-8")
        (reports_dir / f"{stem}.csv").write_text(reporting.convergence_csv(run), encoding="utf-8")
        _write_json(reports_dir / f"{stem}.timing.json", {s.stage_label: s.wall_time for s in stages})
        print(f"== {cfg.name} / {args.mode} / seed {seed} ==")
        print(reporting.estimate_table(run))
        runs.append(run)
    if len(runs) > 1:
        summary = reporting.spread_table(runs)
        (reports_dir / f"{args.mode}_spread.txt").write_text(summary, encoding="utf-8")
        (reports_dir / f"{args.mode}_spread.csv").write_text(reporting.spread_csv(runs), encoding="utf-8")
        print(summary)
    return EXIT_OK


def _full(model):
    from .trajectory import full_layout

    return full_layout(model)


# -- verify-grad -----------------------------------------------------------------


def verify_gradients(cfg: ScenarioConfig, sources: list[Trajectory], *, pairs=20, horizon=50, h=1e-5, rtol=1e-4, floor=1e-8, seed=0):
    """Forward-mode vs central differences on random (parameters, fragment) pairs.

    Returns one ``(relative error, absolute error on tiny entries)`` pair per sample.
    """
    model = cfg.model()
    layout = cfg.layout(model)
    rng = np.random.default_rng(seed)
    cls = layout.class_of()
    lowest = np.where(cls == "mass", mass_floor(model, layout), 0.0)
    usable = [t for t in sources if len(t) > horizon]
    if not usable:
        raise TooShortError(f"no source is longer than the horizon {horizon}")
    results = []
    for _ in range(pairs):
        src = usable[rng.integers(len(usable))]
        start = int(rng.integers(0, len(src) - horizon))
        frag = src.fragment(start, horizon)
        theta = ModelParams.nominal(layout).flatten()
        # mass deltas stay above half the way to the physical floor
        theta += np.where(cls == "mass", rng.uniform(np.maximum(0.5 * lowest, -1.0), 1.0), 0.0)
        theta += np.where(cls == "com", rng.uniform(-0.02, 0.02, theta.size), 0.0)
        theta += np.where((cls == "damping") | (cls == "friction"), rng.uniform(-0.3, 0.3, theta.size), 0.0)
        params = ModelParams.unflatten(layout, theta)
        g = evaluate(model, params, [frag], cfg.loss).gradient
        g_fd = fd_gradient(model, params, [frag], cfg.loss, h)
        results.append(gradient_error(g, g_fd, floor))
    return results


def cmd_verify_grad(args) -> int:
    cfg = _config(args)
    root = _out_dir(args, cfg)
    unloaded, loaded = _sources(root)
    results = verify_gradients(cfg, unloaded + loaded, pairs=args.pairs, horizon=args.horizon, seed=cfg.seed)
    worst = max(r for r, _ in results)
    worst_abs = max(a for _, a in results)
    for i, (rel, small) in enumerate(results):
        print(f"pair {i:2d}: max rel err {rel:.3e}  max abs err (|g| <= 1e-8) {small:.3e}")
    ok = worst < 1e-4 and worst_abs < 1e-8
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} over {len(results)} pairs")
    return EXIT_OK if ok else EXIT_FAIL


# -- report -------------------------------------------------------------------------


def cmd_report(args) -> int:
    dirs = [Path(d) for d in args.run_dirs] or ([_out_dir(args, _config(args))] if args.config else [])
    if not dirs and args.output:
        dirs = [Path(args.output)]
    runs = []
    for d in dirs:
        files = sorted((d / "reports").glob("*_seed*.json")) if (d / "reports").is_dir() else []
        files = [f for f in files if not f.name.endswith(".timing.json")]
        runs += [reporting.RunRecord.from_json(f.read_text(encoding="utf-8")) for f in files]
    if not runs:
        raise FileNotFoundError(f"no reports found under {', '.join(map(str, dirs)) or '(no directories given)'}")
    dest = Path(args.output) if args.output else dirs[0]
    dest = dest / "summary"
    dest.mkdir(parents=True, exist_ok=True)
    text = reporting.comparison_table(runs)
    (dest / "comparison.txt").write_text(text, encoding="utf-8")
    (dest / "comparison.csv").write_text(reporting.comparison_csv(runs), encoding="utf-8")
    for run in runs:
        (dest / f"{run.scenario}_{run.mode}_seed{run.seed}_loss.csv").write_text(reporting.loss_curve_csv(run), encoding="utf-8")
    print(text)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def add_globals(parser, default):
        parser.add_argument("--config", default=default, help="scenario JSON file")
        parser.add_argument("--output", default=default, help="run directory (default: the config's output_dir or runs/<name>)")
        parser.add_argument("--seed", type=int, default=default, help="override the scenario seed")

    # the global options are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="diffsysid", description="Differentiable-simulation system identification.")
    add_globals(p, None)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate unloaded and loaded trajectories").set_defaults(func=cmd_generate)
    sub.add_parser("process", parents=[common], help="foot-height correction of stance timesteps").set_defaults(func=cmd_process)
    ident = sub.add_parser("identify", parents=[common], help="run an identification mode")
    ident.add_argument("--mode", choices=MODES, default="two-stage")
    ident.add_argument("--seeds", help="seed or inclusive range A..B")
    ident.set_defaults(func=cmd_identify)
    vg = sub.add_parser("verify-grad", parents=[common], help="check gradients against finite differences")
    vg.add_argument("--pairs", type=int, default=20)
    vg.add_argument("--horizon", type=int, default=50)
    vg.set_defaults(func=cmd_verify_grad)
    rep = sub.add_parser("report", parents=[common], help="consolidate reports into comparison tables")
    rep.add_argument("run_dirs", nargs="*")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NonFiniteGradientError, NonConvergedError, SingularJacobianError, NonPhysicalError, TooShortError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
