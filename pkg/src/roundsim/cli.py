"""Command-line entry point for every offline workflow.

One executable, six subcommands: simulate (single episode with logs and plot
data), batch (Monte Carlo evaluation), gen-data (sample and label training
sets), train (fit one or all networks), distill (the full data/train/refine
pipeline), eval-nn (agreement against the exact planners), serve (realtime
session server).

Settings resolve in three layers: built-in defaults, then a JSON config file
(--config), then explicit command-line flags; flags win. Every artifact a
command writes embeds the fully resolved configuration and seeds, so any
output can be reproduced from its own header.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import (
    ConfigError,
    MODEL_FILES,
    RunConfig,
    apply_overrides,
    load_config,
)
from .reward import TrafficState

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on bad usage; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _weights(text: str) -> tuple[float, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 6:
        raise argparse.ArgumentTypeError(f"need 6 weights, got {len(parts)}")
    return tuple(float(p) for p in parts)


def _hidden(text: str) -> tuple[int, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise argparse.ArgumentTypeError("need at least one layer width")
    return tuple(int(p) for p in parts)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roundsim", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", metavar="PATH", help="JSON config file; flags override it")
    parser.add_argument("--layout", metavar="PATH", dest="layout_path", help="layout JSON file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--output-dir", help="directory all artifacts go to")
    parser.add_argument("--estimator", choices=("exact", "nn"), help="critical/type estimator mode")
    parser.add_argument("--model-dir", help="directory with nn_a.npz, nn_b.npz, nn_c.npz")
    parser.add_argument("--dt", type=float, help="sim step, seconds")
    parser.add_argument("--horizon", type=int, dest="horizon_n", help="planning horizon, steps")
    parser.add_argument("--lam", type=float, help="reward discount per step")
    parser.add_argument("--beta", type=float, help="belief update rate")
    parser.add_argument("--v-max", type=float, dest="v_max", help="speed cap, m/s")
    parser.add_argument("--weights", type=_weights, help="6 reward weights, comma separated")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario episode and write its log")
    p.add_argument("--scenario", default="symmetric", help="scenario id (see scenarios module)")
    p.add_argument("--opp", default="type1", choices=("type1", "type2"), help="opponent kind")
    p.add_argument("--max-ticks", type=_positive_int, default=120)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("batch", help="Monte Carlo evaluation over random scenarios")
    p.add_argument("-n", type=_positive_int, required=True, help="number of episodes")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--max-ticks", type=_positive_int, default=120)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("gen-data", help="sample and label the three training sets")
    p.add_argument("-n", type=_positive_int, required=True, help="number of base states")
    p.add_argument("--c-target", type=_positive_int, help="row target for the type set")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit networks from dataset files")
    p.add_argument("--net", default="all", choices=("A", "B", "C", "all"))
    p.add_argument("--data-dir", help="directory with set_a/set_b/set_c CSVs (default: output dir)")
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--hidden", type=_hidden, help="layer widths, comma separated")
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="full pipeline: generate, train, refine on-policy")
    p.add_argument("-n", type=_positive_int, required=True, help="number of base states")
    p.add_argument("--c-target", type=_positive_int)
    p.add_argument("--rounds", type=int, default=2, help="on-policy refinement rounds")
    p.add_argument("--round-states", type=_positive_int)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval-nn", help="agreement of fitted networks against the exact planners")
    p.add_argument("--net", required=True, choices=("A", "B", "C", "bundle"))
    p.add_argument("--against", default="exact", choices=("exact",))
    p.add_argument("-n", type=_positive_int, default=500,
                   help="states to test (episodes when --net bundle)")
    p.set_defaults(func=cmd_eval_nn)

    p = sub.add_parser("serve", help="realtime session server (human drives the opponent)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)

    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    return apply_overrides(
        cfg,
        layout_path=args.layout_path,
        seed=args.seed,
        output_dir=args.output_dir,
        estimator=args.estimator,
        model_dir=args.model_dir,
        dt=args.dt,
        horizon_n=args.horizon_n,
        lam=args.lam,
        beta=args.beta,
        v_max=args.v_max,
        weights=args.weights,
    )


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def _load_nn(cfg: RunConfig, layout):
    from .approximation import NNBundle, load_approximator

    model_dir = cfg.require_models()
    nets = [load_approximator(os.path.join(model_dir, n)) for n in MODEL_FILES]
    return NNBundle(*nets, layout)


def cmd_simulate(cfg: RunConfig, args) -> int:
    from .scenarios import get_scenario
    from .simulator import run_episode

    scenario = get_scenario(args.scenario)
    layout = scenario.layout()
    ecfg = scenario.config(
        opp_kind=args.opp,
        seed=cfg.seed,
        max_ticks=args.max_ticks,
        estimator_mode=cfg.estimator,
    )
    nn = _load_nn(cfg, layout) if cfg.estimator == "nn" else None
    stem = f"simulate_{args.scenario}_{args.opp}_seed{cfg.seed}"
    log_path = _out(cfg, stem + ".jsonl")
    result = run_episode(ecfg, layout, w=cfg.weights, nn=nn, log_path=log_path)

    csv_path = _out(cfg, stem + ".csv")
    with open(csv_path, "w") as f:
        f.write("# " + json.dumps(cfg.header()) + "\n")
        f.write(
            "tick,t,ego_x,ego_y,ego_v,ego_theta,opp_x,opp_y,opp_v,opp_theta,"
            "ego_action,opp_action,p2,critical\n"
        )
        init = ecfg.initial
        f.write(
            f"0,0.0,{init.ego.x!r},{init.ego.y!r},{init.ego.v!r},{init.ego.theta!r},"
            f"{init.opp.x!r},{init.opp.y!r},{init.opp.v!r},{init.opp.theta!r},,,0.5,\n"
        )
        for r in result.records:
            f.write(
                f"{r.tick},{r.tick * ecfg.params.dt!r},"
                f"{r.ego.x!r},{r.ego.y!r},{r.ego.v!r},{r.ego.theta!r},"
                f"{r.opp.x!r},{r.opp.y!r},{r.opp.v!r},{r.opp.theta!r},"
                f"{r.ego_action},{r.opp_action},{r.p2!r},{int(r.critical)}\n"
            )
    print(f"outcome={result.outcome} ticks={result.ticks} p2={result.records[-1].p2:.3f}")
    print(f"log: {log_path}")
    print(f"plot data: {csv_path}")
    return EXIT_OK


def cmd_batch(cfg: RunConfig, args) -> int:
    from .simulator import run_batch

    layout = cfg.load_layout()
    nn = _load_nn(cfg, layout) if cfg.estimator == "nn" else None
    report = run_batch(
        args.n,
        master_seed=cfg.seed,
        layout=layout,
        params=cfg.sim_params(),
        max_ticks=args.max_ticks,
        estimator_mode=cfg.estimator,
        nn=nn,
        w=cfg.weights,
        workers=args.workers,
    )
    path = _out(cfg, f"batch_n{args.n}_seed{cfg.seed}.json")
    _write_json(path, {**cfg.header(), "report": report.to_dict()})
    print(f"episodes={report.n_episodes} success_rate={report.success_rate:.4f}")
    for outcome in sorted(report.counts):
        print(f"  {outcome}: {report.counts[outcome]}")
    print(f"report: {path}")
    return EXIT_OK


_DATASET_FILES = {"A": "set_a.csv", "B": "set_b.csv", "C": "set_c.csv"}


def cmd_gen_data(cfg: RunConfig, args) -> int:
    from .approximation import generate_dataset, save_dataset

    layout = cfg.load_layout()
    sets = generate_dataset(
        args.n,
        seed=cfg.seed,
        params=cfg.sim_params(),
        layout=layout,
        w=cfg.weights,
        c_target=args.c_target,
        progress=_progress_printer("labeling"),
    )
    for ds in sets:
        ds.meta["run_config"] = cfg.to_dict()
        path = _out(cfg, _DATASET_FILES[ds.kind])
        save_dataset(ds, path)
        print(f"set {ds.kind}: {len(ds)} rows -> {path}")
    return EXIT_OK


def _hyperparams(args):
    from .approximation import PRODUCTION_HYPERPARAMS

    hp = PRODUCTION_HYPERPARAMS
    updates = {
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "hidden": args.hidden,
        "optimizer": args.optimizer,
    }
    from dataclasses import replace

    return replace(hp, **{k: v for k, v in updates.items() if v is not None})


def cmd_train(cfg: RunConfig, args) -> int:
    from .approximation import load_dataset, split, train

    data_dir = args.data_dir or cfg.output_dir
    model_dir = cfg.model_dir or cfg.output_dir
    os.makedirs(model_dir, exist_ok=True)
    kinds = ("A", "B", "C") if args.net == "all" else (args.net,)
    hp = _hyperparams(args)
    accuracies = {}
    for kind in kinds:
        path = os.path.join(data_dir, _DATASET_FILES[kind])
        if not os.path.exists(path):
            raise ConfigError(f"dataset file not found: {path} (run gen-data first)")
        ds = load_dataset(path)
        tr, va = split(ds, 0.8, seed=cfg.seed)
        net = train(tr, va, hp, seed=cfg.seed)
        net.metadata["run_config"] = cfg.to_dict()
        model_path = os.path.join(model_dir, f"nn_{kind.lower()}.npz")
        net.save(model_path)
        accuracies[kind] = net.metadata["val_accuracy"]
        print(f"NN_{kind}: val_accuracy={accuracies[kind]:.4f} -> {model_path}")
    report_path = _out(cfg, f"train_{'_'.join(kinds)}.json")
    _write_json(
        report_path,
        {**cfg.header(), "hyperparams": hp.to_dict(), "val_accuracy": accuracies},
    )
    print(f"report: {report_path}")
    return EXIT_OK


def cmd_distill(cfg: RunConfig, args) -> int:
    from .approximation import distill, save_dataset

    layout = cfg.load_layout()
    bundle, sets, report = distill(
        args.n,
        seed=cfg.seed,
        params=cfg.sim_params(),
        layout=layout,
        w=cfg.weights,
        c_target=args.c_target,
        rounds=args.rounds,
        round_states=args.round_states,
        progress=_progress_printer("labeling"),
    )
    model_dir = cfg.model_dir or cfg.output_dir
    bundle.save(model_dir)
    for ds in sets:
        ds.meta["run_config"] = cfg.to_dict()
        save_dataset(ds, _out(cfg, _DATASET_FILES[ds.kind]))
    path = _out(cfg, f"distill_n{args.n}_seed{cfg.seed}.json")
    _write_json(path, {**cfg.header(), "report": report})
    final = report["rounds"][-1]["val_accuracy"]
    print("val accuracy: " + "  ".join(f"NN_{k}={v:.4f}" for k, v in sorted(final.items())))
    print(f"models: {model_dir}")
    print(f"report: {path}")
    return EXIT_OK


def cmd_eval_nn(cfg: RunConfig, args) -> int:
    from . import approximation as approx
    from .approximation import load_approximator

    layout = cfg.load_layout()
    params = cfg.sim_params()
    if args.net == "bundle":
        bundle = _load_nn(cfg, layout)
        rate, rows = approx.closed_loop_agreement(
            bundle, n_episodes=args.n, master_seed=cfg.seed,
            layout=layout, params=params, w=cfg.weights,
        )
        path = _out(cfg, f"eval_bundle_n{args.n}.json")
        _write_json(path, {**cfg.header(), "agreement": rate, "episodes": rows})
        print(f"closed-loop agreement over {args.n} episodes: {rate:.4f}")
        print(f"report: {path}")
        return EXIT_OK

    model_dir = cfg.require_models()
    net = load_approximator(os.path.join(model_dir, f"nn_{args.net.lower()}.npz"))
    rate, tested = _open_loop_agreement(net, args.net, args.n, cfg, layout, params)
    path = _out(cfg, f"eval_{args.net}_n{args.n}.json")
    _write_json(path, {**cfg.header(), "agreement": rate, "states": tested})
    print(f"NN_{args.net} agreement with exact planners on {tested} states: {rate:.4f}")
    print(f"report: {path}")
    return EXIT_OK


def _open_loop_agreement(net, kind, n, cfg, layout, params):
    """Agreement on freshly sampled labeled states (seeded, exact labels)."""
    from .approximation import (
        _draw_corridor,
        _draw_encounter,
        _draw_field,
        _draw_routes,
        _label_state,
        _route_pool,
        encode_critical,
        encode_policy,
        encode_type,
    )
    from .geometry import DEFAULT_ZONES
    from .policy import PlanCache

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    cache = PlanCache(layout, params, cfg.weights, DEFAULT_ZONES)
    pool = _route_pool(layout)
    match = total = 0
    draws = 0
    while total < n and draws < 50 * n:
        draws += 1
        routes = _draw_routes(rng, pool)
        u = rng.random()
        if u < 0.2:
            X = _draw_field(rng, layout, params.v_max)
        elif u < 0.6:
            X = _draw_corridor(rng, layout, routes, params.v_max)
        else:
            X = _draw_encounter(rng, layout, params.v_max)
        zeta, a1, a2, g1, g2 = _label_state(cache, X, routes)
        if kind == "A":
            eta = 1 if rng.random() < 0.5 else 2
            pred = net.predict_one(encode_policy(X, routes, layout, eta))
            match += int(pred == (a1 if eta == 1 else a2))
        elif kind == "B":
            pred = net.predict_one(encode_critical(X, routes, layout))
            match += int(bool(pred) == zeta)
        else:
            if not zeta:
                continue
            truth = 1 if rng.random() < 0.5 else 2
            action_id = g1 if truth == 1 else g2
            from .kinematics import ACTION_BY_ID

            pred = net.predict_one(encode_type(X, routes, layout, ACTION_BY_ID[action_id]))
            match += int(pred == truth)
        total += 1
    if total == 0:
        raise ConfigError("no evaluable states drawn; increase -n")
    return match / total, total


def cmd_serve(cfg: RunConfig, args) -> int:
    from .server import serve

    if not (0 < args.port < 65536):
        raise ConfigError(f"port must be in 1..65535, got {args.port}")
    if cfg.estimator == "nn":
        cfg.require_models()
    print(f"listening on ws://{args.host}:{args.port} (estimator={cfg.estimator})")
    serve(cfg, args.host, args.port)
    return EXIT_OK


def _progress_printer(label: str):
    def cb(done: int, total: int) -> None:
        if done == total or done % max(total // 20, 1) == 0:
            print(f"{label}: {done}/{total}", file=sys.stderr, flush=True)

    return cb


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
        return args.func(cfg, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as e:
        print(f"error: unknown scenario {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:  # runtime failure contract: exit 2, message on stderr
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
