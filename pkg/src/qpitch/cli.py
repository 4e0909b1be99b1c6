"""Command-line entry point: ``qpitch {trim,modes,train,eval,compare}``.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure, 3 missing artifact.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .airframe import SimulationFault, TrimError, linearize_longitudinal, load_reference, longitudinal_modes
from .config import ConfigError, load_config
from . import harness

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_MISSING = 0, 1, 2, 3

log = logging.getLogger("qpitch")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file overriding the shipped defaults")
    common.add_argument("--seed", type=int, help="master seed (defaults from [seeds])")
    common.add_argument("--out-dir", type=Path, default=Path("runs"), help="output directory (default: runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    env = argparse.ArgumentParser(add_help=False)
    env.add_argument("--mode", choices=("mdp", "pomdp"), default="mdp")
    env.add_argument("--gust", action=argparse.BooleanOptionalAction, default=None, help="Dryden vertical gust")
    env.add_argument("--noise", action=argparse.BooleanOptionalAction, default=None, help="multiplicative sensor noise")
    env.add_argument("--ensemble", type=int, default=1, metavar="N", help="run N consecutive seeds in parallel")

    p = _Parser(prog="qpitch", description="Tabular Q-learning pitch-attitude control toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("trim", parents=[common], help="trim solution and open-loop drift check")
    t.add_argument("--plot", action="store_true", help="write trim.svg")

    sub.add_parser("modes", parents=[common], help="longitudinal linearization and modes")

    tr = sub.add_parser("train", parents=[common, env], help="train a Q-table")
    tr.add_argument("--episodes", type=int, help="episode count (default from [schedule])")

    ev = sub.add_parser("eval", parents=[common, env], help="run one evaluation scenario")
    ev.add_argument("--controller", choices=harness.CONTROLLERS, default="faa")
    ev.add_argument("--table", type=Path, help="Q-table (default: <out-dir>/qtable_<mode>.txt)")
    ev.add_argument("--scenario", choices=("step", "profile"), default="step")
    ev.add_argument("--plot", action="store_true", help="write an SVG next to the CSV log")

    cp = sub.add_parser("compare", parents=[common, env], help="metric table over controllers or saved logs")
    cp.add_argument("--controllers", default="mdp,pomdp,faa,pid", help="comma-separated controller list")
    cp.add_argument("--mdp-table", type=Path, help="default: <out-dir>/qtable_mdp.txt")
    cp.add_argument("--pomdp-table", type=Path, help="default: <out-dir>/qtable_pomdp.txt")
    cp.add_argument("--scenario", choices=("step", "profile"), default="step")
    cp.add_argument("--logs", nargs="+", type=Path, help="compare existing episode-log CSVs instead")
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _config(args):
    overrides = {}
    if getattr(args, "gust", None) is not None:
        overrides["episode.gust"] = str(args.gust).lower()
    if getattr(args, "noise", None) is not None:
        overrides["episode.noise"] = str(args.noise).lower()
    return load_config(args.config, overrides)


def cmd_trim(args) -> int:
    cfg = _config(args)
    rep = harness.trim_report(cfg)
    print(harness.format_trim_report(rep))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = args.out_dir / "trim_response.csv"
    stride = max(1, int(round(0.1 / cfg.dt)))
    with path.open("w") as fh:
        fh.write("t_s,theta_dev_deg,alpha_deg\n")
        for k in range(0, rep["t"].size, stride):
            t, th, al = float(rep["t"][k]), math.degrees(rep["theta_dev"][k]), math.degrees(rep["alpha"][k])
            fh.write(f"{t!r},{th!r},{al!r}\n")
    artifacts = [path]
    if args.plot:
        svg = _plot_trim(rep, args.out_dir / "trim.svg")
        if svg:
            artifacts.append(svg)
    harness.write_manifest(args.out_dir, cfg, "trim", {}, artifacts)
    return EXIT_OK


def _plot_trim(rep, path):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping plot")
        return None
    fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    a1.plot(rep["t"], np.degrees(rep["theta_dev"]))
    a1.set_ylabel("theta - theta_trim [deg]")
    a2.plot(rep["t"], np.degrees(rep["alpha"]))
    a2.set_ylabel("alpha [deg]")
    a2.set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def cmd_modes(args) -> int:
    cfg = _config(args)
    trim = harness.solve_trim(cfg)
    A = linearize_longitudinal(cfg.model, trim, cfg.trim_tol)
    modes = longitudinal_modes(A)
    ref = load_reference(cfg.dataset)
    np.set_printoptions(precision=6, suppress=False, linewidth=110)
    print("longitudinal Jacobian over (u, w, q, theta):")
    print(A)
    print("eigenvalues:", ", ".join(f"{z.real:.5f}{z.imag:+.5f}i" for z in modes.eigenvalues))
    print(f"{'mode':<14}{'root':>22}{'wn [rad/s]':>12}{'zeta':>9}{'oscillatory':>13}{'published':>22}")
    for name, pair in (("short period", modes.short_period), ("phugoid", modes.phugoid)):
        z = max(pair.roots, key=lambda r: r.imag)
        pub = ref.get(name.replace(" ", "_"))
        pub_s = f"{pub.real:.4f}{pub.imag:+.4f}i" if pub is not None else "-"
        print(
            f"{name:<14}{f'{z.real:.5f}{z.imag:+.5f}i':>22}{pair.natural_frequency:>12.5f}"
            f"{pair.damping_ratio:>9.4f}{str(pair.oscillatory):>13}{pub_s:>22}"
        )
    print("stable:", modes.stable)
    return EXIT_OK


def _seeds(args, default: int) -> list[int]:
    if args.ensemble < 1:
        raise ConfigError("--ensemble must be at least 1")
    base = default if args.seed is None else args.seed
    return [base + k for k in range(args.ensemble)]


def _train_one(config_path, overrides, mode, seed, episodes, out_dir):
    cfg = load_config(config_path, overrides)
    summary = harness.run_training(cfg, mode, seed, episodes, out_dir)
    harness.write_manifest(
        out_dir, cfg, "train", {"train": seed}, [summary["table"], summary["trace"]],
    )
    return summary


def cmd_train(args) -> int:
    cfg = _config(args)
    overrides = {k: v for k, v in cfg.parser.items("episode") if k in ("gust", "noise")}
    overrides = {f"episode.{k}": v for k, v in overrides.items()}
    seeds = _seeds(args, cfg.train_seed)
    if args.episodes is not None and args.episodes < 0:
        raise ConfigError("--episodes must be non-negative")
    dirs = [args.out_dir if len(seeds) == 1 else args.out_dir / f"seed_{s}" for s in seeds]
    jobs = [(args.config, overrides, args.mode, s, args.episodes, d) for s, d in zip(seeds, dirs)]
    summaries = harness.fan_out(_train_one, jobs)
    for s in summaries:
        print(
            f"{s['mode']} seed {s['seed']}: {s['episodes']} episodes, first positive episode "
            f"{s['first_positive_episode']}, positive episodes {s['positive_episodes']}, "
            f"final 500-episode moving average {s['final_moving_average']:.1f}, aborted {s['aborted_episodes']}"
        )
        print(f"  table: {s['table']}\n  trace: {s['trace']}")
    if len(summaries) > 1:
        rows = [{k: s[k] for k in ("seed", "first_positive_episode", "positive_episodes", "final_moving_average")} for s in summaries]
        path = harness.write_rows_csv(rows, args.out_dir / f"ensemble_{args.mode}.csv")
        print(harness.format_rows(rows))
        print(f"ensemble summary: {path}")
    return EXIT_OK


def _scenario(cfg, name, controller, table, gust, noise, seed):
    if name == "step":
        return harness.step_scenario(cfg, controller, table, bool(gust), bool(noise), seed)
    return harness.profile_scenario(
        cfg, controller, table, True if gust is None else gust, True if noise is None else noise, seed
    )


def _table_for(args, controller):
    if controller in ("pid", "trim"):
        return None
    mode = "pomdp" if controller == "pomdp" else ("mdp" if controller == "mdp" else args.mode)
    return args.table if getattr(args, "table", None) else args.out_dir / f"qtable_{mode}.txt"


def _eval_one(config_path, scenario_args, out_dir, plot):
    cfg = load_config(config_path)
    sc = _scenario(cfg, *scenario_args)
    lg = harness.run_scenario(cfg, sc)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{sc.name}_{sc.controller}_seed{sc.seed}"
    csv_path = lg.write_csv(out_dir / f"{stem}.csv")
    artifacts = [csv_path]
    if plot:
        svg = harness.plot_log(lg, out_dir / f"{stem}.svg", f"{sc.name} / {sc.controller}")
        if svg:
            artifacts.append(svg)
    metrics = harness.episode_metrics(lg, cfg.evaluation.transient if sc.name == "profile" else 0.0)
    inputs = [sc.table_path] if sc.table_path else []
    harness.write_manifest(out_dir, cfg, "eval", {"eval": sc.seed}, artifacts + inputs)
    return stem, metrics, lg.aborted, str(csv_path)


def cmd_eval(args) -> int:
    cfg = _config(args)
    table = _table_for(args, args.controller)
    if table is not None and not Path(table).is_file():
        raise harness.MissingArtifact(f"Q-table not found: {table}")
    seeds = _seeds(args, cfg.eval_seed)
    jobs = [
        (args.config, (args.scenario, args.controller, table, args.gust, args.noise, s),
         args.out_dir if len(seeds) == 1 else args.out_dir / f"seed_{s}", args.plot)
        for s in seeds
    ]
    rows = []
    for stem, m, aborted, path in harness.fan_out(_eval_one, jobs):
        print(f"{stem}: log {path}")
        if aborted:
            print(f"  aborted: {aborted}")
        rows.append({"run": stem, **{k: m[k] for k in harness.METRIC_COLUMNS}})
    print(harness.format_rows(rows))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config(args)
    if args.logs:
        named = {}
        for p in args.logs:
            name = p.stem if p.stem not in named else f"{p.stem}#{len(named) + 1}"
            named[name] = harness.EpisodeLog.read_csv(p)
        transient = 0.0
    else:
        controllers = [c.strip() for c in args.controllers.split(",") if c.strip()]
        bad = [c for c in controllers if c not in harness.CONTROLLERS]
        if bad:
            raise ConfigError(f"unknown controllers: {', '.join(bad)}")
        seed = cfg.eval_seed if args.seed is None else args.seed
        trim = harness.solve_trim(cfg)
        named = {}
        for c in controllers:
            if c == "pomdp" or (c == "faa" and args.mode == "pomdp"):
                table = args.pomdp_table or args.out_dir / "qtable_pomdp.txt"
            elif c in ("mdp", "faa"):
                table = args.mdp_table or args.out_dir / "qtable_mdp.txt"
            else:
                table = None
            sc = _scenario(cfg, args.scenario, c, table, args.gust, args.noise, seed)
            named[c] = harness.run_scenario(cfg, sc, trim=trim)
        transient = cfg.evaluation.transient if args.scenario == "profile" else 0.0
    rows = harness.compare_table(named, transient)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = harness.write_rows_csv(rows, args.out_dir / "compare.csv")
    print(harness.format_rows(rows))
    print(f"written: {path}")
    return EXIT_OK


COMMANDS = {"trim": cmd_trim, "modes": cmd_modes, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (harness.MissingArtifact, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (TrimError, SimulationFault, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
