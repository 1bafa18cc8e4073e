"""Layout presets and the YAML-backed run configuration.

Every tunable named elsewhere in the package appears in `default_config`,
so a single YAML file (deep-merged over the defaults) can drive the CLI.
"""

from dataclasses import dataclass

import yaml

from .data import BehaviorConfig
from .diffusion import DenoiserConfig, PlannerTrainConfig
from .distance import HorizonConfig, PhaseConfig, PredictorConfig
from .execution import ExecConfig


@dataclass(frozen=True)
class LayoutDefaults:
    """Per-layout evaluation constants: tolerance and the three fixed
    baseline horizons. t_max (the distance-model cap) is the largest one."""

    eps: float
    horizons: tuple[int, int, int]

    @property
    def t_max(self) -> int:
        return self.horizons[2]


LAYOUTS = {
    "umaze": LayoutDefaults(eps=0.04, horizons=(64, 128, 192)),
    "medium": LayoutDefaults(eps=0.03, horizons=(192, 288, 384)),
    "large": LayoutDefaults(eps=0.03, horizons=(256, 384, 512)),
}


def default_config(maze: str = "umaze") -> dict:
    if maze not in LAYOUTS:
        raise KeyError(f"unknown maze layout {maze!r}")
    lay = LAYOUTS[maze]
    return {
        "maze": maze,
        "seed": 0,
        "data": {
            "episodes": 2000,
            "max_steps": 800,
            "ou_theta": 0.15,
            "ou_sigma_scale": 0.3,
            "pause_prob": 0.02,
            "pause_len": [5, 20],
            "detour_prob": 0.3,
            "follow_speed": 0.95,
            "speed_gain": 3.0,
            "accel_gain": 6.0,
            "capture_cells": 1.5,
            "goal_cells": 0.6,
            "clearance": 0.15,
            "min_path_cells": 3,
        },
        "distance": {
            "t_max": lay.t_max,
            "eps": lay.eps,
            "rff_features": 128,
            "rff_sigma": 1.0,
            "hidden": [256, 256, 256],
            "huber_kappa": 0.1,
            "w_cons": 1.0,
            "w_tri": 0.5,
            "w_bdry": 0.1,
            "w_clip": 0.1,
            "lr": 1e-3,
            "batch": 64,
            "ema_decay": 0.995,
            "grad_clip": 1.0,
            "pool_size": 256,
            "ramp_steps": 2000,
            "phases": None,  # list of phase dicts, None keeps the curriculum
        },
        "planner": {
            "channels": 64,
            "blocks": 6,
            "kernel": 5,
            "groups": 8,
            "temb_dim": 64,
            "dilations": [1, 2, 4, 8, 1, 1],
            "t_diff": 100,
            "steps": 200_000,
            "batch": 32,
            "lr": 2e-4,
            "grad_clip": 1.0,
            "l_min": 16,
            "t_max": lay.t_max,
            "fixed_horizon": None,
        },
        "horizon": {
            "gamma": 1.15,
            "l_min": 16,
        },
        "exec": {
            "kp": 10.0,
            "kd": 2.0 * 10.0 ** 0.5,
            "step_budget": 1500,
            "replan_threshold": 0.05,
            "replan_check_every": 10,
        },
        "eval": {
            "n_instances": 1000,
            "eps": lay.eps,
            "horizons": list(lay.horizons),
            "max_batch": 64,
            "keep_traces": 0,
        },
    }


def deep_merge(base: dict, overlay: dict) -> dict:
    """Recursive dict merge; overlay values win, nested dicts merge."""
    out = dict(base)
    for k, v in overlay.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, maze: str | None = None, seed: int | None = None) -> dict:
    """Defaults for the chosen layout, overlaid with a YAML file if given.

    The file's own `maze` key selects the defaults unless `maze` overrides
    it; `seed` overrides last.
    """
    overlay = {}
    if path is not None:
        with open(path) as f:
            overlay = yaml.safe_load(f) or {}
        if not isinstance(overlay, dict):
            raise ValueError(f"config root must be a mapping: {path}")
    name = maze or overlay.get("maze") or "umaze"
    cfg = deep_merge(default_config(name), overlay)
    cfg["maze"] = name
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def save_config(cfg: dict, path):
    with open(path, "w") as f:
        yaml.safe_dump(cfg, f, sort_keys=True)


# ---------------------------------------------------------------------------
# section-to-dataclass builders

def behavior_config(cfg: dict) -> BehaviorConfig:
    d = cfg["data"]
    return BehaviorConfig(
        episodes=d["episodes"], max_steps=d["max_steps"],
        ou_theta=d["ou_theta"], ou_sigma_scale=d["ou_sigma_scale"],
        pause_prob=d["pause_prob"], pause_len=tuple(d["pause_len"]),
        detour_prob=d["detour_prob"], follow_speed=d["follow_speed"],
        speed_gain=d["speed_gain"], accel_gain=d["accel_gain"],
        capture_cells=d["capture_cells"], goal_cells=d["goal_cells"],
        clearance=d["clearance"], min_path_cells=d["min_path_cells"],
    )


def predictor_config(cfg: dict) -> PredictorConfig:
    d = cfg["distance"]
    kw = dict(
        t_max=d["t_max"], eps=d["eps"], rff_features=d["rff_features"],
        rff_sigma=d["rff_sigma"], hidden=tuple(d["hidden"]),
        huber_kappa=d["huber_kappa"], w_cons=d["w_cons"], w_tri=d["w_tri"],
        w_bdry=d["w_bdry"], w_clip=d["w_clip"], lr=d["lr"], batch=d["batch"],
        ema_decay=d["ema_decay"], grad_clip=d["grad_clip"],
        pool_size=d["pool_size"], ramp_steps=d["ramp_steps"],
    )
    if d.get("phases"):
        kw["phases"] = tuple(
            PhaseConfig(
                steps=p["steps"], goal_mix=tuple(p["goal_mix"]),
                k_set=tuple(p["k_set"]), relay_prob=p["relay_prob"],
                mine_m=p["mine_m"], cons_scale=p["cons_scale"],
                tri_scale=p["tri_scale"],
            )
            for p in d["phases"]
        )
    return PredictorConfig(**kw)


def denoiser_config(cfg: dict) -> DenoiserConfig:
    d = cfg["planner"]
    return DenoiserConfig(
        channels=d["channels"], blocks=d["blocks"], kernel=d["kernel"],
        groups=d["groups"], temb_dim=d["temb_dim"],
        dilations=tuple(d["dilations"]), t_diff=d["t_diff"],
    )


def planner_train_config(cfg: dict) -> PlannerTrainConfig:
    d = cfg["planner"]
    return PlannerTrainConfig(
        steps=d["steps"], batch=d["batch"], lr=d["lr"],
        grad_clip=d["grad_clip"], l_min=d["l_min"], t_max=d["t_max"],
        fixed_horizon=d["fixed_horizon"],
    )


def horizon_config(cfg: dict) -> HorizonConfig:
    return HorizonConfig(
        t_max=cfg["distance"]["t_max"],
        gamma=cfg["horizon"]["gamma"],
        l_min=cfg["horizon"]["l_min"],
    )


def exec_config(cfg: dict) -> ExecConfig:
    d = cfg["exec"]
    return ExecConfig(
        kp=d["kp"], kd=d["kd"], step_budget=d["step_budget"],
        replan_threshold=d["replan_threshold"],
        replan_check_every=d["replan_check_every"],
    )
