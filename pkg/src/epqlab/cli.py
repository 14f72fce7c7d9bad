"""Command-line entry point: ``epqlab {gen-data,train,bias,certify,scenario,sweep}``.

Exit codes: 0 success, 2 configuration or input error, 3 divergence guard,
4 underestimation certificate not issued.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kernels
from .analysis import (BIAS_COLUMNS, CERTIFICATE_COLUMNS, SCENARIO_ACTION_COLUMNS,
                       SCENARIO_COLUMNS, ScenarioSetup, measure_bias, run_scenario,
                       verify_underestimation, write_rows)
from .config import ExperimentConfig, load_config
from .dataset import estimate_behavior, generate_dataset, load_dataset, save_dataset
from .errors import EPQError
from .learner import load_agent, save_agent, train, write_metrics
from .mdp import TabularPolicy, load_mdp, save_mdp
from .penalty import rho

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CERTIFICATE = 0, 2, 3, 4
SWEEP_COLUMNS = ("alpha", "tau_ratio", "tau", "c_min", "epsilon_radius", "zeta", "mode",
                 "status", "steps", "mean_f", "mean_abs_penalty", "squared_bias")


def _echo(cfg: ExperimentConfig, out: Path, command: str, **extra) -> None:
    doc = dict(command=command, backend=kernels.BACKEND, config=cfg.echo(), **extra)
    (out / f"config_{command}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _fixed_policy(cfg, dataset, mdp_behavior=None):
    kind = cfg.training.policy
    if kind == "improve":
        return None
    if kind == "uniform":
        return TabularPolicy.uniform(dataset.n_states, dataset.n_actions)
    # the count-based behavior estimate, uniform at unvisited states
    probs = estimate_behavior(dataset).probs
    return TabularPolicy(np.where(np.isnan(probs), 1.0 / dataset.n_actions, probs))


def _train(cfg, dataset, mdp, learner=None):
    learner = learner or cfg.learner
    model = mdp if (learner.exact and cfg.training.model == "true") else None
    coords = None if mdp is None else mdp.state_coords
    return train(dataset, learner, model=model, fixed_policy=_fixed_policy(cfg, dataset),
                 state_coords=coords)


def cmd_gen_data(cfg: ExperimentConfig, out: Path, args) -> int:
    mdp = cfg.environment.build()
    behavior = cfg.behavior.build(mdp.n_states, mdp.n_actions)
    ds = generate_dataset(mdp, behavior, cfg.dataset.n_episodes, cfg.dataset.horizon,
                          cfg.dataset.seed)
    save_dataset(ds, out / "dataset.txt")
    save_mdp(mdp, out / "mdp.txt")
    _echo(cfg, out, "gen-data")
    print(f"episodes={ds.n_episodes} transitions={len(ds)} coverage={ds.coverage():.6f}")
    return EXIT_OK


def _inputs(args, out):
    ds_path = Path(args.dataset) if args.dataset else out / "dataset.txt"
    mdp_path = Path(args.mdp) if args.mdp else out / "mdp.txt"
    if not ds_path.exists():
        raise FileNotFoundError(f"dataset file {ds_path} not found (run gen-data first)")
    dataset = load_dataset(ds_path)
    mdp = load_mdp(mdp_path) if mdp_path.exists() else None
    if mdp is not None and (mdp.n_states, mdp.n_actions) != (dataset.n_states, dataset.n_actions):
        raise EPQError("dataset and MDP dimensions differ")
    return dataset, mdp


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    dataset, mdp = _inputs(args, out)
    if cfg.learner.exact and cfg.training.model == "true" and mdp is None:
        raise FileNotFoundError("training.model = true needs an MDP file")
    agent = _train(cfg, dataset, mdp)
    save_agent(agent, out / "agent.json")
    write_metrics(agent, out / "metrics.csv")
    tau = cfg.learner.penalty.tau(dataset.n_actions)
    _echo(cfg, out, "train", tau=tau, rho=rho(dataset.n_actions))
    print(f"status={agent.status} steps={agent.steps} tau={tau:.6g} "
          f"tau_over_rho={tau / rho(dataset.n_actions):.6g}")
    return EXIT_DIVERGED if agent.status == "diverged" else EXIT_OK


def cmd_bias(cfg: ExperimentConfig, out: Path, args) -> int:
    agent_path = Path(args.agent) if args.agent else out / "agent.json"
    if not agent_path.exists():
        raise FileNotFoundError(f"agent artifact {agent_path} not found (run train first)")
    mdp_path = Path(args.mdp) if args.mdp else out / "mdp.txt"
    if not mdp_path.exists():
        raise FileNotFoundError(f"MDP file {mdp_path} not found")
    agent = load_agent(agent_path)
    mdp = load_mdp(mdp_path)
    report = measure_bias(agent, mdp, n_rollouts=cfg.analysis.n_rollouts,
                          seed=cfg.analysis.mc_seed)
    write_rows(out / "bias.csv", BIAS_COLUMNS, report.rows())
    _echo(cfg, out, "bias")
    print(f"squared_bias={report.squared_bias:.6g} mode={report.mode}")
    return EXIT_OK


def cmd_certify(cfg: ExperimentConfig, out: Path, args) -> int:
    dataset, mdp = _inputs(args, out)
    if mdp is None:
        raise FileNotFoundError("certify needs the true MDP file")
    cert = verify_underestimation(dataset, mdp, cfg.learner, xi=cfg.analysis.xi,
                                  policy=_fixed_policy(cfg, dataset))
    write_rows(out / "certificate.csv", CERTIFICATE_COLUMNS, cert.rows())
    _echo(cfg, out, "certify")
    verdict = {True: "pass", False: "fail", None: "not-issued"}[cert.passed]
    print(f"certificate={verdict} alpha={cert.alpha_used:.6g} "
          f"threshold={cert.alpha_threshold:.6g} min_margin={np.min(cert.margins):.6g}")
    if cert.warning:
        print(f"warning: {cert.warning}", file=sys.stderr)
    return EXIT_OK if cert.passed else EXIT_CERTIFICATE


def _scenario_cell(task):
    case, method, alpha, sc, learner = task
    setup = ScenarioSetup(sc.n_angle_bins, sc.n_velocity_bins, sc.n_action_bins,
                          sc.n_behavior_samples, sc.discount)
    report = run_scenario(case, method, alpha, sc.tau_ratio, sc.seed, setup, learner)
    return case, method, alpha, report


def _run_pool(fn, tasks, workers):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))  # map keeps input order


def cmd_scenario(cfg: ExperimentConfig, out: Path, args) -> int:
    sc = cfg.scenario
    tasks = [(c, m, a, sc, cfg.learner) for c in sc.cases for m in sc.methods for a in sc.alpha]
    results = _run_pool(_scenario_cell, tasks, args.workers)
    torques = np.linspace(-2.0, 2.0, sc.n_action_bins)
    for case in sc.cases:
        for method in sc.methods:
            cell = [r for c, m, _, r in results if c == case and m == method]
            write_rows(out / f"scenario_{case}_{method}.csv", SCENARIO_COLUMNS,
                       (dict(alpha=r.alpha, tau=r.tau, bias=float(r.bias[0]),
                             squared_bias=r.squared_bias, stderr=float(r.mc_stderr[0]))
                        for r in cell))
            write_rows(out / f"scenario_{case}_{method}_actions.csv", SCENARIO_ACTION_COLUMNS,
                       (dict(alpha=r.alpha, tau=r.tau, action=k, torque=float(torques[k]),
                             q_bias=float(r.action_bias[k]))
                        for r in cell for k in range(sc.n_action_bins)))
            print(f"{case} {method} " + " ".join(f"alpha={r.alpha:g}:bias={r.bias[0]:.6g}"
                                                  for r in cell))
    _echo(cfg, out, "scenario")
    return EXIT_OK


def _sweep_cell(task):
    cfg, cell, dataset, mdp = task
    learner = replace(cfg.learner, penalty=replace(cfg.learner.penalty, **cell))
    agent = _train(cfg, dataset, mdp, learner)
    sq = ""
    if mdp is not None:
        sq = measure_bias(agent, mdp, states=np.unique(dataset.state)).squared_bias
    return dict(cell, tau=learner.penalty.tau(dataset.n_actions), mode=learner.mode,
                status=agent.status, steps=agent.steps,
                mean_f=float(agent.history["mean_f"][-1]),
                mean_abs_penalty=float(agent.history["mean_abs_penalty"][-1]), squared_bias=sq)


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> int:
    dataset, mdp = _inputs(args, out)
    tasks = [(cfg, cell, dataset, mdp) for cell in cfg.sweep.cells()]
    rows = _run_pool(_sweep_cell, tasks, args.workers)
    write_rows(out / "sweep.csv", SWEEP_COLUMNS, rows)
    _echo(cfg, out, "sweep")
    print(f"cells={len(rows)} diverged={sum(r['status'] == 'diverged' for r in rows)}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "bias": cmd_bias,
    "certify": cmd_certify,
    "scenario": cmd_scenario,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epqlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI experiment config (defaults if omitted)")
        p.add_argument("--seed", type=int, help="global seed overriding the config")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--workers", type=int, default=1, help="parallel sweep/scenario cells")
        if name in ("train", "certify", "sweep"):
            p.add_argument("--dataset", help="dataset file (default OUT/dataset.txt)")
        if name in ("train", "bias", "certify", "sweep"):
            p.add_argument("--mdp", help="MDP file (default OUT/mdp.txt)")
        if name == "bias":
            p.add_argument("--agent", help="agent artifact (default OUT/agent.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("dataset", "mdp", "agent"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.workers < 1:
            raise EPQError("--workers must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except (EPQError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
