"""Plan execution: a PD tracker plus the two evaluation protocols.

Both protocols issue exactly one control action per plan index (row j of the
plan is the reference for env step j), terminate the moment the state enters
the goal region, and never exceed the step budget.

Step accounting follows the hitting-time convention: a run that hits the
goal at state index k is charged k steps; a plan executed to exhaustion
without a hit is charged its full length L (one more than the L - 1 actions
issued, since row 0 is the start state). `ExecResult.executed_steps` is that
charge; `env_steps` counts actual simulator calls.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .maze import POS, VEL, GoalSpec, MazeSpec, in_goal, step


@dataclass(frozen=True)
class ExecConfig:
    kp: float = 10.0
    kd: float = 2.0 * math.sqrt(10.0)
    step_budget: int = 1500
    replan_threshold: float = 0.05  # normalized l2 position error
    replan_check_every: int = 10

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ValueError("PD gains must be nonnegative")
        if self.step_budget < 1:
            raise ValueError("step_budget must be >= 1")
        if self.replan_threshold <= 0:
            raise ValueError("replan_threshold must be positive")
        if self.replan_check_every < 1:
            raise ValueError("replan_check_every must be >= 1")


def pd_action(state, waypoint, cfg: ExecConfig, a_max: float) -> np.ndarray:
    """PD acceleration toward a waypoint state, clamped per axis."""
    state = np.asarray(state, dtype=np.float64)
    waypoint = np.asarray(waypoint, dtype=np.float64)
    a = cfg.kp * (waypoint[POS] - state[POS]) + cfg.kd * (waypoint[VEL] - state[VEL])
    return np.clip(a, -a_max, a_max).astype(np.float32)


@dataclass
class ExecResult:
    success: bool
    executed_steps: int  # AES charge, <= step_budget
    env_steps: int
    replan_count: int
    horizons: list[int]  # requested plan length per segment
    segment_steps: list[int]  # env steps actually taken per segment
    segment_charges: list[int]  # per-segment step charges, sum == executed_steps
    trace: np.ndarray  # (env_steps + 1, 4) visited states, world coords
    actions: np.ndarray  # (env_steps, 2)
    plan_index: np.ndarray  # (env_steps,) plan row tracked at each step
    segment_id: np.ndarray  # (env_steps,)
    plans: list[np.ndarray] = field(default_factory=list)


class _Recorder:
    def __init__(self, start):
        self.states = [np.asarray(start, dtype=np.float32)]
        self.actions = []
        self.plan_index = []
        self.segment_id = []

    def add(self, state, action, j, seg):
        self.states.append(state)
        self.actions.append(action)
        self.plan_index.append(j)
        self.segment_id.append(seg)

    def result(self, success, charges, horizons, seg_steps, replans, plans):
        return ExecResult(
            success=success,
            executed_steps=int(sum(charges)),
            env_steps=len(self.actions),
            replan_count=replans,
            horizons=horizons,
            segment_steps=seg_steps,
            segment_charges=[int(c) for c in charges],
            trace=np.stack(self.states),
            actions=(np.stack(self.actions) if self.actions
                     else np.empty((0, 2), dtype=np.float32)),
            plan_index=np.array(self.plan_index, dtype=np.int64),
            segment_id=np.array(self.segment_id, dtype=np.int64),
            plans=plans,
        )


class _Tracker:
    """Walks one plan row per env step, sharing state across segments."""

    def __init__(self, spec, normalizer, start, gs: GoalSpec, cfg: ExecConfig):
        self.spec = spec
        self.norm = normalizer
        self.state = np.asarray(start, dtype=np.float32)
        self.gs = gs
        self.cfg = cfg
        self.rec = _Recorder(start)
        self.steps = 0  # global env-step counter, drives check cadence
        self.hit = in_goal(start, gs, normalizer)

    def run_segment(self, plan_world, seg: int, check: bool):
        """Returns 'hit', 'deviated', 'exhausted', or 'budget'."""
        cfg = self.cfg
        for j in range(1, len(plan_world)):
            if self.steps >= cfg.step_budget:
                return "budget"
            a = pd_action(self.state, plan_world[j], cfg, self.spec.a_max)
            self.state = step(self.spec, self.state, a)
            self.steps += 1
            self.rec.add(self.state, a, j, seg)
            if in_goal(self.state, self.gs, self.norm):
                self.hit = True
                return "hit"
            if check and self.steps % cfg.replan_check_every == 0:
                err = np.linalg.norm(
                    self.norm.normalize(self.state)[POS]
                    - self.norm.normalize(plan_world[j])[POS]
                )
                if err > cfg.replan_threshold:
                    return "deviated"
        return "exhausted"


def run_single_shot(spec: MazeSpec, normalizer, start, gs: GoalSpec,
                    plan_world, cfg: ExecConfig = ExecConfig()) -> ExecResult:
    """Execute one plan to the first goal hit or to exhaustion.

    `plan_world` is an (L, 4) state sequence in world coordinates whose row 0
    is the current state. The charge is min(L, budget) when the goal is never
    entered, else the hitting index.
    """
    plan_world = np.asarray(plan_world, dtype=np.float32)
    L = len(plan_world)
    tr = _Tracker(spec, normalizer, start, gs, cfg)
    if tr.hit:
        return tr.rec.result(True, [0], [L], [0], 0, [plan_world])
    outcome = tr.run_segment(plan_world, seg=0, check=False)
    charge = tr.steps if outcome == "hit" else min(L, cfg.step_budget)
    return tr.rec.result(outcome == "hit", [charge], [L], [tr.steps], 0, [plan_world])


def run_replan(spec: MazeSpec, normalizer, start, gs: GoalSpec, make_plan,
               horizon_for, cfg: ExecConfig = ExecConfig(),
               keep_plans: bool = False,
               max_segments: int = 10_000) -> ExecResult:
    """Execute with deviation-triggered replanning.

    Every `replan_check_every` env steps the normalized position error to the
    current reference row is compared to the threshold; on exceedance a new
    plan is requested from the current state (`make_plan(state, L) -> (L, 4)`
    world coordinates, `horizon_for(state) -> int`). A segment that runs out
    of rows without deviating ends the run. Requested horizons are capped by
    the remaining budget.
    """
    tr = _Tracker(spec, normalizer, start, gs, cfg)
    horizons: list[int] = []
    seg_steps: list[int] = []
    charges: list[int] = []
    plans: list[np.ndarray] = []
    replans = 0
    if tr.hit:
        return tr.rec.result(True, charges, horizons, seg_steps, 0, plans)
    for seg in range(max_segments):
        remaining = cfg.step_budget - tr.steps
        if remaining <= 0:
            break
        L = max(2, min(int(horizon_for(tr.state)), remaining))
        plan_world = np.asarray(make_plan(tr.state, L), dtype=np.float32)
        horizons.append(L)
        if keep_plans:
            plans.append(plan_world)
        before = tr.steps
        outcome = tr.run_segment(plan_world, seg, check=True)
        took = tr.steps - before
        seg_steps.append(took)
        if outcome == "hit":
            charges.append(took)
            return tr.rec.result(True, charges, horizons, seg_steps, replans, plans)
        if outcome == "deviated":
            charges.append(took)
            replans += 1
            continue
        # exhausted or budget: the run is over, charge like single-shot
        charges.append(min(L, remaining))
        break
    else:
        raise RuntimeError("replanning did not terminate within max_segments")
    return tr.rec.result(False, charges, horizons, seg_steps, replans, plans)


def trace_rows(result: ExecResult):
    """Yield (step, state, action, plan_index, segment_id) per env step."""
    for i in range(result.env_steps):
        yield (i + 1, result.trace[i + 1], result.actions[i],
               int(result.plan_index[i]), int(result.segment_id[i]))
