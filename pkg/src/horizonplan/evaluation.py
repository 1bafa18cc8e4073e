"""Benchmark harness: test-set generation, method evaluation under both
execution protocols, SR/AES aggregation, and report emission.

Fairness contract: every method sees the identical instance list, the same
goal tolerance, and a per-instance noise stream seeded by (seed, instance id)
only, so method A's runs never perturb method B's.
"""

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Normalizer, fit_normalizer
from .diffusion import PlannerBundle, PlanningError, plan_batch
from .distance import (DistanceBundle, HorizonConfig, bound_violation_rate,
                       make_bound_probes, predict_horizon, rank_correlation)
from .execution import ExecConfig, ExecResult, run_replan, run_single_shot
from .maze import DEFAULT_GOAL_MASK, GoalSpec, MazeSpec, in_goal, sample_free_state
from .oracle import ReachGraph, shortest_steps

KINDS = ("adaptive", "fixed", "fixed_lp")
PROTOCOLS = ("ss", "rp")


# ---------------------------------------------------------------------------
# test instances

@dataclass(frozen=True)
class Instance:
    id: int
    start: np.ndarray  # (4,) rest state
    goal: np.ndarray  # (4,) rest state
    maze_name: str


def gen_test_set(spec: MazeSpec, n: int, eps: float, seed: int,
                 graph: ReachGraph | None = None,
                 normalizer: Normalizer | None = None,
                 goal_mask=DEFAULT_GOAL_MASK,
                 max_tries: int = 200) -> list[Instance]:
    """n reachable start/goal pairs, deterministic in seed.

    Draws whose goal is unreachable from the start, or whose start already
    satisfies the goal tolerance, are rejected and resampled.
    """
    graph = graph if graph is not None else ReachGraph(spec)
    normalizer = normalizer if normalizer is not None else fit_normalizer(spec)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    out = []
    for i in range(n):
        for attempt in range(max_tries):
            start = sample_free_state(spec, rng)
            goal = sample_free_state(spec, rng)
            gs = GoalSpec(goal=goal, eps=eps, mask=goal_mask)
            if in_goal(start, gs, normalizer):
                continue
            if not graph.same_component(start, goal):
                continue
            out.append(Instance(id=i, start=start, goal=goal, maze_name=spec.name))
            break
        else:
            raise RuntimeError(
                f"could not sample a reachable pair in {max_tries} tries"
            )
    return out


def instance_oracle_steps(graph: ReachGraph, instances, eps: float,
                          t_max: int, normalizer,
                          goal_mask=DEFAULT_GOAL_MASK) -> np.ndarray:
    """Oracle step counts per instance (t_max marks at-or-over the cap)."""
    return np.array([
        shortest_steps(graph, inst.start, inst.goal, eps, t_max,
                       normalizer, mask=goal_mask)
        for inst in instances
    ], dtype=np.float64)


# ---------------------------------------------------------------------------
# methods

@dataclass
class MethodSpec:
    """One table column: a planner, a horizon source, and a protocol."""

    name: str
    kind: str  # adaptive | fixed | fixed_lp
    protocol: str  # ss | rp
    planner: PlannerBundle
    horizon: int | None = None  # constant, kind == fixed
    distance: DistanceBundle | None = None  # kinds adaptive / fixed_lp
    horizon_cfg: HorizonConfig | None = None
    planner_path: str | None = None  # checkpoint provenance for the manifest
    distance_path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.kind == "fixed":
            if self.horizon is None or self.horizon < 2:
                raise ValueError("fixed methods need a constant horizon >= 2")
        elif self.distance is None or self.horizon_cfg is None:
            raise ValueError(f"{self.kind} methods need a distance model")


@dataclass
class EvalConfig:
    eps: float
    seed: int = 0
    exec_cfg: ExecConfig = field(default_factory=ExecConfig)
    goal_mask: tuple[int, ...] = DEFAULT_GOAL_MASK
    max_batch: int = 64  # planner batch cap for grouped single-shot calls
    keep_traces: int = 0  # retain full ExecResults for this many instances


@dataclass
class InstanceRow:
    instance_id: int
    success: bool
    executed_steps: int
    env_steps: int
    replan_count: int
    initial_horizon: int
    n_segments: int
    planner_failed: bool


@dataclass
class MethodResult:
    name: str
    kind: str
    protocol: str
    rows: list[InstanceRow]
    sr: float
    aes: float
    mean_replans: float
    mean_initial_horizon: float
    traces: dict[int, ExecResult] = field(default_factory=dict)


@dataclass
class EvalReport:
    maze_name: str
    n_instances: int
    eps: float
    seed: int
    methods: list[MethodResult]
    manifest: dict


def aggregate_rows(rows: list[InstanceRow]) -> tuple[float, float, float, float]:
    """(SR, AES, mean replans, mean initial horizon) from per-instance rows."""
    n = len(rows)
    if n == 0:
        return 0.0, 0.0, 0.0, 0.0
    sr = sum(r.success for r in rows) / n
    aes = sum(r.executed_steps for r in rows) / n
    mr = sum(r.replan_count for r in rows) / n
    mh = sum(r.initial_horizon for r in rows) / n
    return sr, aes, mr, mh


def _instance_rng(seed: int, instance_id: int):
    return np.random.default_rng(np.random.SeedSequence([seed, instance_id, 0]))


def _horizon_fn(m: MethodSpec, normalizer: Normalizer):
    """Maps a world-coordinate (state, goal) pair to a requested horizon."""
    if m.kind == "fixed":
        h = int(m.horizon)
        return lambda s, g: h
    model = m.distance.model
    hcfg = m.horizon_cfg

    def fn(s, g):
        sn = normalizer.normalize(np.asarray(s, dtype=np.float64))[None]
        gn = normalizer.normalize(np.asarray(g, dtype=np.float64))[None]
        return int(predict_horizon(model, hcfg, sn.astype(np.float32),
                                   gn.astype(np.float32))[0])

    return fn


def _failure_row(inst: Instance, horizon: int, cfg: EvalConfig) -> InstanceRow:
    return InstanceRow(
        instance_id=inst.id, success=False,
        executed_steps=cfg.exec_cfg.step_budget, env_steps=0,
        replan_count=0, initial_horizon=horizon, n_segments=0,
        planner_failed=True,
    )


def _row_from_result(inst: Instance, res: ExecResult) -> InstanceRow:
    return InstanceRow(
        instance_id=inst.id, success=res.success,
        executed_steps=res.executed_steps, env_steps=res.env_steps,
        replan_count=res.replan_count,
        initial_horizon=res.horizons[0] if res.horizons else 0,
        n_segments=len(res.horizons),
        planner_failed=False,
    )


def _eval_single_shot(m: MethodSpec, spec, normalizer, instances, cfg):
    hfn = _horizon_fn(m, normalizer)
    horizons = [hfn(inst.start, inst.goal) for inst in instances]
    budget = cfg.exec_cfg.step_budget
    horizons = [min(h, budget) for h in horizons]
    rows: dict[int, InstanceRow] = {}
    traces: dict[int, ExecResult] = {}
    groups: dict[int, list[int]] = {}
    for idx, h in enumerate(horizons):
        groups.setdefault(h, []).append(idx)
    for L in sorted(groups):
        idxs = groups[L]
        for lo in range(0, len(idxs), cfg.max_batch):
            chunk = idxs[lo:lo + cfg.max_batch]
            insts = [instances[i] for i in chunk]
            s_n = np.stack([normalizer.normalize(i.start) for i in insts])
            g_n = np.stack([normalizer.normalize(i.goal) for i in insts])
            rngs = [_instance_rng(cfg.seed, i.id) for i in insts]
            try:
                plans_n = plan_batch(m.planner.model, m.planner.sched,
                                     s_n.astype(np.float32),
                                     g_n.astype(np.float32), L, rngs)
            except PlanningError:
                for inst in insts:
                    rows[inst.id] = _failure_row(inst, L, cfg)
                continue
            for b, inst in enumerate(insts):
                plan_w = normalizer.denormalize(plans_n[b])
                gs = GoalSpec(goal=inst.goal, eps=cfg.eps, mask=cfg.goal_mask)
                res = run_single_shot(spec, normalizer, inst.start, gs,
                                      plan_w, cfg.exec_cfg)
                rows[inst.id] = _row_from_result(inst, res)
                if inst.id < cfg.keep_traces:
                    traces[inst.id] = res
    ordered = [rows[inst.id] for inst in instances]
    return ordered, traces


def _eval_replan(m: MethodSpec, spec, normalizer, instances, cfg):
    hfn = _horizon_fn(m, normalizer)
    rows = []
    traces: dict[int, ExecResult] = {}
    for inst in instances:
        rng = _instance_rng(cfg.seed, inst.id)
        gs = GoalSpec(goal=inst.goal, eps=cfg.eps, mask=cfg.goal_mask)
        g_n = normalizer.normalize(inst.goal).astype(np.float32)

        def make_plan(s_world, L):
            s_n = normalizer.normalize(s_world).astype(np.float32)
            p = plan_batch(m.planner.model, m.planner.sched,
                           s_n[None], g_n[None], L, [rng])[0]
            return normalizer.denormalize(p)

        def horizon_for(s_world):
            return hfn(s_world, inst.goal)

        try:
            res = run_replan(spec, normalizer, inst.start, gs, make_plan,
                             horizon_for, cfg.exec_cfg,
                             keep_plans=inst.id < cfg.keep_traces)
        except PlanningError:
            rows.append(_failure_row(inst, hfn(inst.start, inst.goal), cfg))
            continue
        rows.append(_row_from_result(inst, res))
        if inst.id < cfg.keep_traces:
            traces[inst.id] = res
    return rows, traces


def evaluate_method(m: MethodSpec, spec: MazeSpec, normalizer: Normalizer,
                    instances: list[Instance], cfg: EvalConfig) -> MethodResult:
    if m.protocol == "ss":
        rows, traces = _eval_single_shot(m, spec, normalizer, instances, cfg)
    else:
        rows, traces = _eval_replan(m, spec, normalizer, instances, cfg)
    sr, aes, mr, mh = aggregate_rows(rows)
    return MethodResult(name=m.name, kind=m.kind, protocol=m.protocol,
                        rows=rows, sr=sr, aes=aes, mean_replans=mr,
                        mean_initial_horizon=mh, traces=traces)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(spec, methods, instances, cfg) -> dict:
    return {
        "maze": spec.name,
        "n_instances": len(instances),
        "eps": cfg.eps,
        "seed": cfg.seed,
        "goal_mask": list(cfg.goal_mask),
        "exec": asdict(cfg.exec_cfg),
        "methods": [
            {
                "name": m.name,
                "kind": m.kind,
                "protocol": m.protocol,
                "horizon": m.horizon,
                "planner_digest": (file_digest(m.planner_path)
                                   if m.planner_path else None),
                "distance_digest": (file_digest(m.distance_path)
                                    if m.distance_path else None),
            }
            for m in methods
        ],
    }


def evaluate(methods: list[MethodSpec], spec: MazeSpec,
             instances: list[Instance], cfg: EvalConfig,
             normalizer: Normalizer | None = None,
             progress=None) -> EvalReport:
    """Run every method on the shared instance list."""
    for inst in instances:
        if inst.maze_name != spec.name:
            raise ValueError(
                f"instance {inst.id} is for maze {inst.maze_name!r}, "
                f"not {spec.name!r}"
            )
    normalizer = normalizer if normalizer is not None else fit_normalizer(spec)
    results = []
    for m in methods:
        r = evaluate_method(m, spec, normalizer, instances, cfg)
        results.append(r)
        if progress:
            progress(r)
    return EvalReport(
        maze_name=spec.name, n_instances=len(instances), eps=cfg.eps,
        seed=cfg.seed, methods=results,
        manifest=_manifest(spec, methods, instances, cfg),
    )


# ---------------------------------------------------------------------------
# length-predictor audit

def audit_distance(bundle: DistanceBundle, spec: MazeSpec, episodes,
                   n_pairs: int, seed: int,
                   graph: ReachGraph | None = None,
                   normalizer: Normalizer | None = None,
                   n_goals: int = 100, n_probes: int = 512,
                   slack: float = 0.05) -> dict:
    """Predictor quality against the reachability oracle on fresh pairs.

    Returns rank correlation and mean absolute error versus the truncated
    normalized oracle distance, the goal-diagonal response f(g, g), and the
    cross-episode upper-bound violation rate.
    """
    graph = graph if graph is not None else ReachGraph(spec)
    normalizer = normalizer if normalizer is not None else fit_normalizer(spec)
    cfg = bundle.cfg
    insts = gen_test_set(spec, n_pairs, cfg.eps, seed, graph=graph,
                         normalizer=normalizer, goal_mask=cfg.goal_mask)
    oracle = instance_oracle_steps(graph, insts, cfg.eps, cfg.t_max,
                                   normalizer, goal_mask=cfg.goal_mask)
    target = np.minimum(1.0, oracle / cfg.t_max)
    s_n = np.stack([normalizer.normalize(i.start) for i in insts]).astype(np.float32)
    g_n = np.stack([normalizer.normalize(i.goal) for i in insts]).astype(np.float32)
    pred = bundle.model.predict(s_n, g_n).astype(np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 32]))
    goals = np.stack([
        normalizer.normalize(sample_free_state(spec, rng))
        for _ in range(n_goals)
    ]).astype(np.float32)
    fgg = bundle.model.predict(goals, goals).astype(np.float64)
    out = {
        "n_pairs": n_pairs,
        "spearman": rank_correlation(pred, target),
        "mae": float(np.mean(np.abs(pred - target))),
        "fgg_mean": float(fgg.mean()),
        "fgg_max": float(fgg.max()),
        "capped_fraction": float(np.mean(oracle >= cfg.t_max)),
    }
    if episodes:
        probes = make_bound_probes(
            [normalizer.normalize(e.states) for e in episodes],
            np.random.default_rng(np.random.SeedSequence([seed, 33])),
            n_probes,
        )
        out["bound_violation_rate"] = bound_violation_rate(
            bundle.model, bundle.ema_model, probes, cfg.t_max, slack=slack
        )
    return out


# ---------------------------------------------------------------------------
# report emission

_RESULT_FIELDS = ("method", "kind", "protocol", "sr", "aes",
                  "mean_replans", "mean_initial_horizon", "n")
_ROW_FIELDS = ("method", "protocol", "instance_id", "success",
               "executed_steps", "env_steps", "replan_count",
               "initial_horizon", "n_segments", "planner_failed")


def emit_report(report: EvalReport, out_dir) -> list[str]:
    """Write results.csv, instances.csv, table.txt, manifest.json, traces/.

    Floats are written with repr so that re-parsing reproduces the report
    exactly. Returns the list of paths written.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []

    p = os.path.join(out_dir, "results.csv")
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_RESULT_FIELDS)
        for m in report.methods:
            w.writerow([m.name, m.kind, m.protocol, repr(m.sr), repr(m.aes),
                        repr(m.mean_replans), repr(m.mean_initial_horizon),
                        report.n_instances])
    paths.append(p)

    p = os.path.join(out_dir, "instances.csv")
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_ROW_FIELDS)
        for m in report.methods:
            for r in m.rows:
                w.writerow([m.name, m.protocol, r.instance_id,
                            int(r.success), r.executed_steps, r.env_steps,
                            r.replan_count, r.initial_horizon, r.n_segments,
                            int(r.planner_failed)])
    paths.append(p)

    p = os.path.join(out_dir, "table.txt")
    with open(p, "w") as f:
        f.write(render_table(report))
    paths.append(p)

    p = os.path.join(out_dir, "manifest.json")
    with open(p, "w") as f:
        json.dump(report.manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    paths.append(p)

    traced = [m for m in report.methods if m.traces]
    if traced:
        tdir = os.path.join(out_dir, "traces")
        os.makedirs(tdir, exist_ok=True)
        for m in traced:
            for iid, res in sorted(m.traces.items()):
                tp = os.path.join(tdir, f"{m.name}_{m.protocol}_{iid}.csv")
                _write_trace(tp, res)
                paths.append(tp)
    return paths


def _write_trace(path, res: ExecResult):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "x", "y", "vx", "vy", "ax", "ay",
                    "plan_index", "segment_id"])
        s0 = res.trace[0]
        w.writerow([0, repr(float(s0[0])), repr(float(s0[1])),
                    repr(float(s0[2])), repr(float(s0[3])), "", "", "", ""])
        for i in range(res.env_steps):
            s = res.trace[i + 1]
            a = res.actions[i]
            w.writerow([i + 1,
                        repr(float(s[0])), repr(float(s[1])),
                        repr(float(s[2])), repr(float(s[3])),
                        repr(float(a[0])), repr(float(a[1])),
                        int(res.plan_index[i]), int(res.segment_id[i])])


def read_results_csv(path) -> list[dict]:
    """Parse results.csv back into typed aggregate rows."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append({
                "method": row["method"],
                "kind": row["kind"],
                "protocol": row["protocol"],
                "sr": float(row["sr"]),
                "aes": float(row["aes"]),
                "mean_replans": float(row["mean_replans"]),
                "mean_initial_horizon": float(row["mean_initial_horizon"]),
                "n": int(row["n"]),
            })
    return out


def _mark(values, best_is_min: bool):
    """Per-column best / second-best markers (dagger and double dagger)."""
    arr = np.asarray(values, dtype=np.float64)
    uniq = np.unique(arr)
    order = uniq if best_is_min else uniq[::-1]
    marks = [""] * len(values)
    for i, v in enumerate(arr):
        if v == order[0]:
            marks[i] = "†"
        elif len(order) > 1 and v == order[1]:
            marks[i] = "‡"
    return marks


def render_table(report: EvalReport) -> str:
    """Text table, methods as columns, SR / AES sub-rows per protocol.

    A dagger marks the best value in a sub-row, a double dagger the second
    best (SR higher is better, AES lower is better).
    """
    lines = [
        f"maze={report.maze_name}  n={report.n_instances}  "
        f"eps={report.eps}  seed={report.seed}"
    ]
    for proto in PROTOCOLS:
        ms = [m for m in report.methods if m.protocol == proto]
        if not ms:
            continue
        names = [m.name for m in ms]
        sr_marks = _mark([m.sr for m in ms], best_is_min=False)
        aes_marks = _mark([m.aes for m in ms], best_is_min=True)
        sr_cells = [f"{m.sr * 100:.1f}{k}" for m, k in zip(ms, sr_marks)]
        aes_cells = [f"{m.aes:.1f}{k}" for m, k in zip(ms, aes_marks)]
        width = max(8, *(len(x) for x in names + sr_cells + aes_cells))
        head = " | ".join(x.rjust(width) for x in ["  "] + names)
        sr_row = " | ".join(x.rjust(width) for x in ["SR"] + sr_cells)
        aes_row = " | ".join(x.rjust(width) for x in ["AES"] + aes_cells)
        lines += ["", f"[{proto.upper()}]", head,
                  "-" * len(head), sr_row, aes_row]
    return "\n".join(lines) + "\n"
