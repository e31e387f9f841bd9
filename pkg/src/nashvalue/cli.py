"""Command-line front end: data generation, training, evaluation, simulation, toy demo."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .game import ALL_CONFIGS, GameGeometry, TypeConfig, load_config
from .io import config_hash, provenance, write_csv, write_json
from .pmp import DOMAINS, DatasetIncomplete, NonConvergence, SolverOptions, SupervisedDataset, generate_dataset
from .simulator import (
    EPISODE_COLUMNS,
    SUITE_COLUMNS,
    BeliefState,
    PolicyBank,
    TrajectoryPolicy,
    checkpoint_name,
    run_complete_info_suite,
    run_incomplete_info_suite,
)
from .toy import ToyBudget, ToyProblem, run_toy_experiment, toy_table
from .trainer import TRACE_COLUMNS, DivergenceDetected, TrainConfig, make_pair, train

log = logging.getLogger("nashvalue")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

DEFAULT_CONFIG = Path(__file__).resolve().parents[2] / "configs" / "default.yaml"
TRAIN_TRAJECTORIES = 1700
TEST_STATES = {"GT": 600, "XP": 500, "HJ": 600}
BELIEF_SCENARIOS = (((0.8, 0.8), "a,a"), ((0.2, 0.2), "a,a"), ((0.8, 0.8), "na,na"), ((0.2, 0.2), "na,na"))


class ConfigError(ValueError):
    pass


def scaled_count(n: int, scale: float) -> int:
    """Proportional count, rounded down, at least one."""
    return max(int(np.floor(n * scale + 1e-9)), 1)


def child_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def config_tag(config: TypeConfig) -> str:
    return config.tag.replace(",", "-")


class Run:
    """Resolved settings of one invocation."""

    def __init__(self, args):
        self.args = args
        if not 0 < args.scale <= 1:
            raise ConfigError("--scale must lie in (0, 1]")
        path = Path(args.config) if args.config else DEFAULT_CONFIG
        if args.config and not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            self.raw = load_config(path) if path.exists() else {}
            self.geom = GameGeometry.from_dict(self.raw.get("game", {}))
            self.solver = SolverOptions(**{k: tuple(v) if isinstance(v, list) else v
                                           for k, v in self.raw.get("solver", {}).items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if args.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {args.domain!r}; choose from {sorted(DOMAINS)}")
        self.domain = DOMAINS[args.domain]
        try:
            self.configs = [TypeConfig.parse(t) for t in args.types.split(";")] if args.types else list(ALL_CONFIGS)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.out = Path(args.out)
        self.seed = args.seed
        self.scale = args.scale

    @property
    def stamp_config(self) -> dict:
        keys = ("command", "domain", "types", "regime", "activation", "boundary_norm")
        return {"file": self.raw, "args": {k: getattr(self.args, k, None) for k in keys}}

    def stamp(self) -> str:
        return provenance(self.seed, self.scale, self.stamp_config)

    def meta(self) -> dict:
        return {"version": __version__, "seed": self.seed, "scale": self.scale,
                "config_hash": config_hash(self.stamp_config)}

    def data_path(self, split: str, config: TypeConfig) -> Path:
        return self.out / "data" / f"{split}_{self.domain.name}_{config_tag(config)}.csv"

    def train_config(self) -> TrainConfig:
        section = dict(self.raw.get("train", {}))
        for key in ("regime", "activation", "boundary_norm"):
            value = getattr(self.args, key)
            if value is not None:
                section[key] = value
        regime = section.pop("regime", "hybrid")
        section["seed"] = self.seed
        try:
            return TrainConfig.full_budget(regime, **section).scaled(self.scale)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train config: {exc}") from exc

    def prefix(self, cfg: TrainConfig) -> str:
        return f"{cfg.regime}_{cfg.activation}_{cfg.boundary_norm}"


# --- commands -----------------------------------------------------------------


def cmd_generate_data(run: Run) -> int:
    split = run.args.split
    base = TRAIN_TRAJECTORIES if split == "train" else TEST_STATES[run.domain.name]
    n = scaled_count(base, run.scale)
    for k, config in enumerate(ALL_CONFIGS):
        if config not in run.configs:
            continue
        seed = child_seed(run.seed, 0 if split == "train" else 1, k)
        log.info("solving %d equilibria for %s on %s", n, config.tag, run.domain.name)
        ds = generate_dataset(run.domain, n, config, seed, run.geom, run.solver)
        ds.metadata.update(run.meta(), split=split)
        ds.save(run.data_path(split, config), stamp=run.stamp())
        print(f"{run.data_path(split, config)}: {len(ds)} records from {n} trajectories")
    return 0


def _load_dataset(run: Run, config: TypeConfig, required: bool) -> SupervisedDataset | None:
    path = run.data_path("train", config)
    if not path.exists():
        if required:
            raise FileNotFoundError(f"training data not found: {path} (run generate-data first)")
        return None
    ds = SupervisedDataset.load(path)
    if ds.type_config != config:
        raise ConfigError(f"{path} holds config {ds.type_config.tag}, expected {config.tag}")
    return ds


def cmd_train(run: Run) -> int:
    cfg = run.train_config()
    prefix = run.prefix(cfg)
    reports = run.out / "reports"
    for k, config in enumerate(ALL_CONFIGS):
        if config not in run.configs:
            continue
        dataset = _load_dataset(run, config, required=cfg.regime != "self_supervised")
        nets = make_pair(config, run.geom, DOMAINS["HJ"], cfg.activation, seed=child_seed(run.seed, 2, k),
                         regime=cfg.regime, out_scale=cfg.out_scale)
        cfg_k = replace(cfg, seed=child_seed(run.seed, 3, k))
        report = train(nets, cfg_k, config, run.geom, DOMAINS["HJ"], dataset)
        paths = []
        for i, net in enumerate(nets):
            net.meta.update(run.meta())
            path = run.out / "checkpoints" / checkpoint_name(prefix, config, i)
            net.save(path)
            paths.append(str(path))
        base = reports / f"train_{prefix}_{config_tag(config)}"
        write_csv(base.with_suffix(".csv"), TRACE_COLUMNS, report.rows(), int_columns={"iteration"},
                  header_comment=run.stamp())
        write_json(base.with_suffix(".summary.json"),
                   {**run.meta(), "type_config": config.tag, "train": cfg_k.to_dict(), "final": report.final(),
                    "wall_clock_s": report.wall_clock, "checkpoints": paths})
        print(f"{config.tag}: {cfg.regime} trained, final loss {report.final()['total'] if report.trace else 'n/a'}")
    return 0


def _ground_truth(run: Run, config: TypeConfig):
    path = run.out / "data" / f"test_{run.domain.name}_{config_tag(config)}.csv"
    if not path.exists():
        raise FileNotFoundError(f"ground-truth set not found: {path} (run generate-data --split test)")
    return SupervisedDataset.load(path).trajectories(run.geom)


def cmd_evaluate(run: Run) -> int:
    dt = float(run.raw.get("simulate", {}).get("dt", 0.1))
    rows = []
    if run.args.oracle:
        label = "oracle"
    else:
        cfg = run.train_config()
        label = run.prefix(cfg)
        bank = PolicyBank.from_dir(run.out / "checkpoints", label, run.configs)
    for config in run.configs:
        gt = _ground_truth(run, config)
        if run.args.oracle:
            policies = lambda traj: (TrajectoryPolicy(traj, 0), TrajectoryPolicy(traj, 1))  # noqa: E731
        else:
            for i in range(2):
                path = run.out / "checkpoints" / checkpoint_name(label, config, i)
                if not path.exists():
                    raise FileNotFoundError(f"checkpoint not found: {path}")
            policies = bank.pair(config)
        metrics, episodes = run_complete_info_suite(policies, gt, run.geom, dt)
        rows.append([config.tag, label, *metrics.as_row()])
        if run.args.svg:
            write_svg(run.out / "reports" / f"evaluate_{label}_{run.domain.name}_{config_tag(config)}.svg",
                      episodes, run.geom)
        print(f"{config.tag} {label}: value MAE {metrics.value_mae:.3f}, control MAE "
              f"{metrics.control_mae_mean:.3f}±{metrics.control_mae_sd:.3f}, collisions {metrics.collision_pct:.2f}%")
    path = run.out / "reports" / f"evaluate_{label}_{run.domain.name}.csv"
    write_csv(path, ("config", "method", *SUITE_COLUMNS), rows, int_columns={"n_episodes", "n_excluded"},
              header_comment=run.stamp())
    write_json(path.with_suffix(".meta.json"), {**run.meta(), "domain": run.domain.name, "dt": dt})
    return 0


def _parse_belief(text: str) -> BeliefState:
    try:
        p1, p2 = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"belief must be 'p1,p2', got {text!r}") from exc
    try:
        return BeliefState(p1, p2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_simulate(run: Run) -> int:
    section = run.raw.get("simulate", {})
    sigma = float(section.get("sigma", 1.0))
    dt = float(section.get("dt", 0.1))
    n_states = scaled_count(int(section.get("n_incomplete_states", 150)), run.scale)
    if run.args.belief or run.args.true_types:
        if not (run.args.belief and run.args.true_types):
            raise ConfigError("--belief and --true-types go together")
        rows_spec = [(_parse_belief(run.args.belief), TypeConfig.parse(run.args.true_types))]
    else:
        rows_spec = [(BeliefState(*b), TypeConfig.parse(t)) for b, t in BELIEF_SCENARIOS]
    cfg = run.train_config()
    label = run.prefix(cfg)
    bank = PolicyBank.from_dir(run.out / "checkpoints", label)
    if bank.missing():
        raise FileNotFoundError(f"policy bank '{label}' is missing configs: "
                                + ", ".join(c.tag for c in bank.missing()))
    rng = np.random.default_rng(child_seed(run.seed, 4))
    initials = run.domain.sample(rng, n_states)
    rows = []
    for k, (belief, truth) in enumerate(rows_spec):
        pct, episodes = run_incomplete_info_suite(bank, belief, truth, initials, run.geom, sigma, dt)
        rows.append([belief.p1, belief.p2, truth.tag, label, pct, len(episodes)])
        trace_rows = [[e, *r] for e, ep in enumerate(episodes) for r in ep.rows()]
        write_csv(run.out / "reports" / f"episodes_{label}_{k}.csv", ("episode", *EPISODE_COLUMNS), trace_rows,
                  int_columns={"episode"}, header_comment=run.stamp())
        print(f"belief ({belief.p1}, {belief.p2}) true {truth.tag}: collisions {pct:.2f}%")
    path = run.out / "reports" / f"simulate_{label}.csv"
    write_csv(path, ("belief_p1", "belief_p2", "true_types", "method", "collision_pct", "n_episodes"), rows,
              int_columns={"n_episodes"}, header_comment=run.stamp())
    write_json(path.with_suffix(".meta.json"), {**run.meta(), "sigma": sigma, "dt": dt, "tie_break": "na"})
    return 0


def cmd_toy(run: Run) -> int:
    section = dict(run.raw.get("toy", {}))
    problem = ToyProblem(eps=float(section.pop("eps", 0.02)),
                         anchors=tuple(section.pop("anchors", (-0.75, -0.25, 0.25, 0.75))))
    try:
        budget = ToyBudget(**section)
    except TypeError as exc:
        raise ConfigError(f"toy config: {exc}") from exc
    results = {r: run_toy_experiment(r, budget, child_seed(run.seed, 5), problem)
               for r in ("supervised", "self_supervised", "hybrid")}
    write_csv(run.out / "toy" / "toy_values.csv", ("x", "supervised", "self_supervised", "hybrid", "truth"),
              toy_table(results), header_comment=run.stamp())
    summary = {r: {"mae": res.mae, "jump": res.jump, "residual_away": res.residual_away}
               for r, res in results.items()}
    write_json(run.out / "toy" / "toy_summary.json", {**run.meta(), "results": summary,
                                                     "hybrid_beats_ssl": summary["hybrid"]["mae"]
                                                     < summary["self_supervised"]["mae"]})
    for r, s in summary.items():
        print(f"{r}: MAE {s['mae']:.3f}, jump {s['jump']:.3f}")
    return 0


def write_svg(path, episodes, geom: GameGeometry, size: int = 400) -> None:
    """Scatter of (d1, d2) along rollouts, colored by player 1's predicted value."""
    from .io import _atomic_write

    if not episodes:
        return
    pts = np.vstack([np.column_stack([ep.states[:, 0], ep.states[:, 2], ep.values[:, 0]]) for ep in episodes])
    lo, hi = pts[:, :2].min(), pts[:, :2].max()
    span = max(hi - lo, 1e-9)
    vlo, vhi = np.percentile(pts[:, 2], [5, 95])
    vspan = max(vhi - vlo, 1e-9)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    a, b = geom.collision_interval(1.0)
    x0, x1 = ((a - lo) / span * size, (b - lo) / span * size)
    out.append(f'<rect x="{x0:.1f}" y="{size - x1:.1f}" width="{x1 - x0:.1f}" height="{x1 - x0:.1f}" '
               'fill="none" stroke="black"/>')
    for d1, d2, v in pts:
        c = int(255 * np.clip((v - vlo) / vspan, 0, 1))
        out.append(f'<circle cx="{(d1 - lo) / span * size:.1f}" cy="{size - (d2 - lo) / span * size:.1f}" '
                   f'r="1.5" fill="rgb({255 - c},0,{c})"/>')
    out.append("</svg>")
    _atomic_write(path, "\n".join(out) + "\n")


# --- entry point ---------------------------------------------------------------


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "toy-demo": cmd_toy,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config (default: configs/default.yaml)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--scale", type=float, default=1.0, help="fraction of full budgets, in (0, 1]")
    common.add_argument("--out", default="runs")
    common.add_argument("--types", help="';'-separated configs such as 'a,a;na,a' (default: all four)")
    common.add_argument("--domain", default="GT", help="GT, HJ or XP")
    common.add_argument("--regime", choices=("supervised", "self_supervised", "hybrid"))
    common.add_argument("--activation", choices=("tanh", "relu", "sin"))
    common.add_argument("--boundary-norm", dest="boundary_norm", choices=("l1", "l2"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nashvalue", description=__doc__)
    parser.add_argument("--version", action="version", version=f"nashvalue {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate-data", parents=[common], help="solve equilibria into supervised datasets")
    gen.add_argument("--split", choices=("train", "test"), default="train")
    sub.add_parser("train", parents=[common], help="train value-net pairs")
    ev = sub.add_parser("evaluate", parents=[common], help="complete-information metrics")
    ev.add_argument("--oracle", action="store_true", help="score the ground truth itself")
    ev.add_argument("--svg", action="store_true", help="also write trajectory scatter plots")
    sim = sub.add_parser("simulate", parents=[common], help="incomplete-information episodes")
    sim.add_argument("--belief", help="initial common belief 'p1,p2'")
    sim.add_argument("--true-types", dest="true_types", help="true types such as 'a,na'")
    sub.add_parser("toy-demo", parents=[common], help="1D jump example under all regimes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args)
        return COMMANDS[args.command](run)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetIncomplete as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DivergenceDetected, NonConvergence, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
