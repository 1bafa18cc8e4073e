"""Command-line surface: data generation, training, evaluation, audits.

Every subcommand reads the layered YAML config (defaults for the chosen
maze, overlaid by --config), honors --seed/--out, and returns exit code 0
only when the requested run completes.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .data import fit_normalizer, read_dataset, write_dataset, generate_dataset
from .diffusion import load_planner, plan, save_planner, train_planner
from .distance import (load_distance, predict_horizon, save_distance,
                       train_distance_model)
from .evaluation import (EvalConfig, MethodSpec, audit_distance, emit_report,
                         evaluate, gen_test_set, render_table)
from .maze import builtin_names, format_grid, make_maze, sample_free_state
from .oracle import ReachGraph


def _progress(prefix):
    def cb(row):
        kv = " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                      for k, v in row.items())
        print(f"[{prefix}] {kv}", flush=True)
    return cb


def _load_episodes(path, spec):
    episodes = read_dataset(path)
    for e in episodes:
        if e.maze_name != spec.name:
            raise ValueError(
                f"dataset {path} is for maze {e.maze_name!r}, config says "
                f"{spec.name!r}"
            )
    return episodes


def _norm_states(episodes, normalizer):
    return [normalizer.normalize(e.states).astype(np.float32) for e in episodes]


def cmd_gen_data(args, cfg):
    spec = make_maze(cfg["maze"])
    bcfg = cfgmod.behavior_config(cfg)
    if args.episodes is not None:
        from dataclasses import replace
        bcfg = replace(bcfg, episodes=args.episodes)
    episodes, stats = generate_dataset(spec, bcfg, cfg["seed"])
    path = os.path.join(args.out, "dataset.mzt")
    os.makedirs(args.out, exist_ok=True)
    write_dataset(path, episodes)
    stats["path"] = path
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def cmd_train_lp(args, cfg):
    spec = make_maze(cfg["maze"])
    episodes = _load_episodes(args.data or os.path.join(args.out, "dataset.mzt"), spec)
    norm = fit_normalizer(spec, episodes)
    pcfg = cfgmod.predictor_config(cfg)
    bundle, history = train_distance_model(
        _norm_states(episodes, norm), pcfg, cfg["seed"],
        progress=_progress("train-lp"),
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, args.name)
    save_distance(path, bundle)
    with open(os.path.join(args.out, args.name + ".history.json"), "w") as f:
        json.dump(history, f, indent=2)
    print(f"saved {path}")
    return 0


def cmd_train_planner(args, cfg):
    spec = make_maze(cfg["maze"])
    episodes = _load_episodes(args.data or os.path.join(args.out, "dataset.mzt"), spec)
    norm = fit_normalizer(spec, episodes)
    den_cfg = cfgmod.denoiser_config(cfg)
    tcfg = cfgmod.planner_train_config(cfg)
    from dataclasses import replace
    if args.steps is not None:
        tcfg = replace(tcfg, steps=args.steps)
    if args.fixed_horizon is not None:
        tcfg = replace(tcfg, fixed_horizon=args.fixed_horizon)
    bundle, history = train_planner(
        _norm_states(episodes, norm), den_cfg, tcfg, cfg["seed"],
        progress=_progress("train-planner"),
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, args.name)
    save_planner(path, bundle)
    with open(os.path.join(args.out, args.name + ".history.json"), "w") as f:
        json.dump(history, f, indent=2)
    print(f"saved {path}")
    return 0


def _parse_methods(args, cfg, lp_bundle, main_bundle, fixed_bundle):
    """Comma list like 'adaptive,fixed:64,fixed_lp' into MethodSpec pairs."""
    hcfg = cfgmod.horizon_config(cfg)
    specs = []
    protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
    names = [m.strip() for m in args.methods.split(",") if m.strip()]
    for proto in protocols:
        for name in names:
            if name == "adaptive":
                if lp_bundle is None:
                    raise ValueError("adaptive method needs --lp")
                specs.append(MethodSpec(
                    name="adaptive", kind="adaptive", protocol=proto,
                    planner=main_bundle, distance=lp_bundle,
                    horizon_cfg=hcfg, planner_path=args.planner,
                    distance_path=args.lp,
                ))
            elif name.startswith("fixed:"):
                h = int(name.split(":", 1)[1])
                specs.append(MethodSpec(
                    name=f"fixed-{h}", kind="fixed", protocol=proto,
                    planner=main_bundle, horizon=h,
                    planner_path=args.planner,
                ))
            elif name == "fixed_lp":
                if lp_bundle is None or fixed_bundle is None:
                    raise ValueError("fixed_lp needs --lp and --fixed-planner")
                specs.append(MethodSpec(
                    name="fixed_lp", kind="fixed_lp", protocol=proto,
                    planner=fixed_bundle, distance=lp_bundle,
                    horizon_cfg=hcfg, planner_path=args.fixed_planner,
                    distance_path=args.lp,
                ))
            else:
                raise ValueError(f"unknown method {name!r}")
    return specs


def cmd_eval(args, cfg):
    spec = make_maze(cfg["maze"])
    main_bundle = load_planner(args.planner)
    lp_bundle = load_distance(args.lp) if args.lp else None
    fixed_bundle = load_planner(args.fixed_planner) if args.fixed_planner else None
    ev = cfg["eval"]
    n = args.instances if args.instances is not None else ev["n_instances"]
    norm = fit_normalizer(spec)
    graph = ReachGraph(spec)
    instances = gen_test_set(spec, n, ev["eps"], cfg["seed"], graph=graph,
                             normalizer=norm)
    if args.methods == "default":
        names = ["fixed:%d" % h for h in ev["horizons"]]
        if lp_bundle is not None:
            names.insert(0, "adaptive")
        if fixed_bundle is not None and lp_bundle is not None:
            names.append("fixed_lp")
        args.methods = ",".join(names)
    methods = _parse_methods(args, cfg, lp_bundle, main_bundle, fixed_bundle)
    ecfg = EvalConfig(
        eps=ev["eps"], seed=cfg["seed"], exec_cfg=cfgmod.exec_config(cfg),
        max_batch=ev["max_batch"],
        keep_traces=args.dump_traces if args.dump_traces is not None
        else ev["keep_traces"],
    )
    report = evaluate(
        methods, spec, instances, ecfg, normalizer=norm,
        progress=lambda m: print(
            f"[eval] {m.name}({m.protocol}) sr={m.sr:.3f} aes={m.aes:.1f}",
            flush=True,
        ),
    )
    paths = emit_report(report, args.out)
    print(render_table(report))
    print("wrote " + ", ".join(paths[:4]) + (
        f" and {len(paths) - 4} trace files" if len(paths) > 4 else ""))
    return 0


def _parse_state(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 2:
        vals += [0.0, 0.0]
    if len(vals) != 4:
        raise ValueError(f"state needs 2 or 4 comma-separated floats: {text!r}")
    return np.array(vals, dtype=np.float32)


def cmd_plan(args, cfg):
    spec = make_maze(cfg["maze"])
    bundle = load_planner(args.planner)
    norm = fit_normalizer(spec)
    rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 41]))
    start = _parse_state(args.start) if args.start else sample_free_state(spec, rng)
    goal = _parse_state(args.goal) if args.goal else sample_free_state(spec, rng)
    if args.horizon is not None:
        L = args.horizon
    elif args.lp:
        lp = load_distance(args.lp)
        hcfg = cfgmod.horizon_config(cfg)
        L = int(predict_horizon(
            lp.model, hcfg,
            norm.normalize(start)[None].astype(np.float32),
            norm.normalize(goal)[None].astype(np.float32),
        )[0])
    else:
        raise ValueError("need --horizon or --lp")
    out = plan(bundle.model, bundle.sched,
               norm.normalize(start).astype(np.float32),
               norm.normalize(goal).astype(np.float32), L, rng)
    states = norm.denormalize(out.states)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "plan.csv")
    with open(path, "w") as f:
        f.write("index,x,y,vx,vy\n")
        for i, row in enumerate(states):
            cells = ",".join(repr(float(v)) for v in row)
            f.write(f"{i},{cells}\n")
    print(f"planned {L} steps from ({start[0]:.3f},{start[1]:.3f}) "
          f"to ({goal[0]:.3f},{goal[1]:.3f}) -> {path}")
    return 0


def cmd_audit_lp(args, cfg):
    spec = make_maze(cfg["maze"])
    bundle = load_distance(args.lp)
    episodes = []
    if args.data:
        episodes = _load_episodes(args.data, spec)
    result = audit_distance(bundle, spec, episodes, n_pairs=args.pairs,
                            seed=cfg["seed"])
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_dump_maze(args, cfg):
    spec = make_maze(cfg["maze"])
    print(format_grid(spec.grid))
    if args.json:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{spec.name}.json")
        with open(path, "w") as f:
            json.dump({
                "name": spec.name,
                "cell_size": spec.cell_size,
                "dt": spec.dt,
                "v_max": spec.v_max,
                "a_max": spec.a_max,
                "grid": spec.grid.tolist(),
            }, f)
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config overlaying the defaults")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--maze", choices=builtin_names(),
                        help="built-in maze layout")

    p = argparse.ArgumentParser(
        prog="horizonplan",
        description="Variable-horizon diffusion planning in 2D mazes.",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    q = sub.add_parser("gen-data", parents=[common],
                       help="generate a behavior dataset")
    q.add_argument("--episodes", type=int)
    q.set_defaults(fn=cmd_gen_data)

    q = sub.add_parser("train-lp", parents=[common],
                       help="train the step-distance model")
    q.add_argument("--data", help="dataset path (default <out>/dataset.mzt)")
    q.add_argument("--name", default="distance.nna")
    q.set_defaults(fn=cmd_train_lp)

    q = sub.add_parser("train-planner", parents=[common],
                       help="train the trajectory diffusion model")
    q.add_argument("--data")
    q.add_argument("--name", default="planner.nna")
    q.add_argument("--steps", type=int)
    q.add_argument("--fixed-horizon", type=int,
                   help="train on constant-length crops (baseline)")
    q.set_defaults(fn=cmd_train_planner)

    q = sub.add_parser("eval", parents=[common],
                       help="evaluate methods on a shared test set")
    q.add_argument("--planner", required=True)
    q.add_argument("--lp")
    q.add_argument("--fixed-planner",
                   help="constant-crop planner checkpoint for fixed_lp")
    q.add_argument("--methods", default="default",
                   help="comma list: adaptive, fixed:H, fixed_lp")
    q.add_argument("--protocols", default="ss,rp")
    q.add_argument("--instances", type=int)
    q.add_argument("--dump-traces", type=int,
                   help="keep traces for this many instances per method")
    q.set_defaults(fn=cmd_eval)

    q = sub.add_parser("plan", parents=[common], help="sample one plan")
    q.add_argument("--planner", required=True)
    q.add_argument("--lp")
    q.add_argument("--horizon", type=int)
    q.add_argument("--start", help="x,y[,vx,vy] world coordinates")
    q.add_argument("--goal")
    q.set_defaults(fn=cmd_plan)

    q = sub.add_parser("audit-lp", parents=[common],
                       help="score the distance model against the oracle")
    q.add_argument("--lp", required=True)
    q.add_argument("--data", help="dataset for bound probes (optional)")
    q.add_argument("--pairs", type=int, default=200)
    q.set_defaults(fn=cmd_audit_lp)

    q = sub.add_parser("dump-maze", parents=[common],
                       help="print a layout; --json writes plot data")
    q.add_argument("--json", action="store_true")
    q.set_defaults(fn=cmd_dump_maze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config, maze=args.maze, seed=args.seed)
        return args.fn(args, cfg)
    except Exception as e:  # CLI boundary: report, signal failure
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
