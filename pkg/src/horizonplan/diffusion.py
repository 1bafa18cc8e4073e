"""Trajectory diffusion: cosine DDPM schedule, a temporal-conv denoiser,
variable-length crop training, and endpoint-conditioned reverse sampling.

Trajectories enter in normalized [0,1]^4 coordinates and are shifted to
[-1,1] internally; the backbone itself is a plain epsilon-predicting DDPM.
Plans of any requested length L are produced by drawing an (L, 4) noise
matrix and clamping the first and last rows to the endpoints after every
reverse step.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Conv1d, GroupNorm, Linear, SiLU, SinusoidalEmbed, collect_params


class PlanningError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# schedule

@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step constants, index i holds step t = i + 1."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bar: np.ndarray
    alpha_bar_prev: np.ndarray
    posterior_var: np.ndarray

    @property
    def t_diff(self) -> int:
        return len(self.betas)


def cosine_schedule(t_diff: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Cosine alpha-bar schedule with betas clipped to (0, max_beta]."""
    steps = np.arange(t_diff + 1, dtype=np.float64)
    f = np.cos(((steps / t_diff + s) / (1 + s)) * np.pi / 2.0) ** 2
    abar = f / f[0]
    betas = np.clip(1.0 - abar[1:] / abar[:-1], 0.0, max_beta)
    alphas = 1.0 - betas
    alpha_bar = np.cumprod(alphas)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * betas
    return NoiseSchedule(
        betas=betas, alphas=alphas, alpha_bar=alpha_bar,
        alpha_bar_prev=alpha_bar_prev, posterior_var=posterior_var,
    )


def _per_sample(coef, t, ndim):
    """Gather schedule constants for 1-based t and pad dims for broadcast."""
    c = coef[np.asarray(t) - 1]
    return c.reshape(c.shape + (1,) * (ndim - c.ndim))


def q_sample(x0, t, eps, sched: NoiseSchedule):
    """Forward marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0)
    if np.shape(eps) != x0.shape:
        raise ValueError(f"noise shape {np.shape(eps)} != {x0.shape}")
    ab = _per_sample(sched.alpha_bar, t, x0.ndim)
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(x0.dtype)


def posterior_step(x_t, eps_hat, t, sched: NoiseSchedule, z=None):
    """One reverse step; the final step (t=1) has zero variance."""
    x_t = np.asarray(x_t)
    b = _per_sample(sched.betas, t, x_t.ndim)
    a = _per_sample(sched.alphas, t, x_t.ndim)
    ab = _per_sample(sched.alpha_bar, t, x_t.ndim)
    var = _per_sample(sched.posterior_var, t, x_t.ndim)
    mu = (x_t - (b / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)
    if z is None:
        return mu.astype(x_t.dtype)
    return (mu + np.sqrt(var) * z).astype(x_t.dtype)


def condition_endpoints(tau, s, g):
    """Overwrite the first and last rows with s and g; returns a copy."""
    out = np.array(tau, copy=True)
    out[..., 0, :] = s
    out[..., -1, :] = g
    return out


def clip_denoised(x_t, eps_hat, t, sched: NoiseSchedule,
                  lo: float = -1.0, hi: float = 1.0):
    """Re-express eps_hat so the implied clean signal lies in [lo, hi].

    The reverse step divides prediction error by sqrt(alpha_t), a factor of
    thirty where the cosine schedule's betas hit their clip, so an implied
    clean signal outside the data box compounds into divergence within a few
    steps. Diffusion runs on trajectories mapped to the centered unit box,
    so the clamp is lossless; predictions already inside the box pass
    through bitwise.
    """
    x_t = np.asarray(x_t)
    ab = _per_sample(sched.alpha_bar, t, x_t.ndim)
    root = np.sqrt(ab)
    root1 = np.sqrt(1.0 - ab)
    x0 = (x_t - root1 * eps_hat) / root
    clipped = np.clip(x0, lo, hi)
    if np.array_equal(clipped, x0):
        return np.asarray(eps_hat, dtype=x_t.dtype)
    return ((x_t - root * clipped) / root1).astype(x_t.dtype)


# ---------------------------------------------------------------------------
# denoiser

@dataclass
class DenoiserConfig:
    state_dim: int = 4
    channels: int = 64
    blocks: int = 6
    kernel: int = 5
    groups: int = 8
    temb_dim: int = 64
    dilations: tuple[int, ...] = (1, 2, 4, 8, 1, 1)
    t_diff: int = 100

    def __post_init__(self):
        if len(self.dilations) != self.blocks:
            raise ValueError("need one dilation per block")


class _ResBlock:
    def __init__(self, cfg: DenoiserConfig, idx: int, rng):
        C, k = cfg.channels, cfg.kernel
        d = cfg.dilations[idx]
        p = f"block{idx}"
        self.conv1 = Conv1d(C, C, k, f"{p}.conv1", rng, dilation=d)
        self.gn1 = GroupNorm(C, cfg.groups, f"{p}.gn1")
        self.tproj = Linear(cfg.temb_dim, C, f"{p}.tproj", rng)
        self.act1 = SiLU()
        self.conv2 = Conv1d(C, C, k, f"{p}.conv2", rng, dilation=d)
        self.gn2 = GroupNorm(C, cfg.groups, f"{p}.gn2")
        self.act2 = SiLU()

    def layers(self):
        return [self.conv1, self.gn1, self.tproj, self.conv2, self.gn2]

    def forward(self, h, te):
        a = self.gn1.forward(self.conv1.forward(h))
        a = a + self.tproj.forward(te)[:, :, None]
        a = self.act1.forward(a)
        a = self.gn2.forward(self.conv2.forward(a))
        return h + self.act2.forward(a)

    def backward(self, dh):
        da = self.act2.backward(dh)
        da = self.conv2.backward(self.gn2.backward(da))
        da = self.act1.backward(da)
        dte = self.tproj.backward(da.sum(axis=2))
        dx = self.conv1.backward(self.gn1.backward(da))
        return dh + dx, dte


class Denoiser:
    """Epsilon predictor over (B, L, d) trajectories and 1-based steps t.

    Any L >= 2 is accepted: the input is right-padded to a multiple of 4
    with a mirrored boundary and the output cropped back.
    """

    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        self.cfg = cfg
        C = cfg.channels
        self.embed = SinusoidalEmbed(cfg.temb_dim)
        self.tmlp1 = Linear(cfg.temb_dim, 4 * cfg.temb_dim, "tmlp1", rng)
        self.tact = SiLU()
        self.tmlp2 = Linear(4 * cfg.temb_dim, cfg.temb_dim, "tmlp2", rng)
        self.in_conv = Conv1d(cfg.state_dim, C, cfg.kernel, "in_conv", rng)
        self.blocks = [_ResBlock(cfg, i, rng) for i in range(cfg.blocks)]
        self.final_conv = Conv1d(C, C, cfg.kernel, "final_conv", rng)
        self.final_gn = GroupNorm(C, cfg.groups, "final_gn")
        self.final_act = SiLU()
        self.out_conv = Conv1d(C, cfg.state_dim, 1, "out_conv", rng, zero=True)
        layers = [self.tmlp1, self.tmlp2, self.in_conv]
        for b in self.blocks:
            layers.extend(b.layers())
        layers += [self.final_conv, self.final_gn, self.out_conv]
        self.store = collect_params(layers)

    def forward(self, x, t):
        B, L, d = x.shape
        if L < 2:
            raise ValueError(f"trajectory length {L} < 2")
        pad = (-L) % 4
        self._pad_src = None
        if pad:
            src = L - 1 - np.arange(pad)
            self._pad_src = src
            x = np.concatenate([x, x[:, src]], axis=1)
        self._L = L
        h = np.ascontiguousarray(x.transpose(0, 2, 1), dtype=np.result_type(x, np.float32))
        te = self.tmlp2.forward(self.tact.forward(self.tmlp1.forward(self.embed.forward(t).astype(h.dtype))))
        h = self.in_conv.forward(h)
        for blk in self.blocks:
            h = blk.forward(h, te)
        f = self.final_act.forward(self.final_gn.forward(self.final_conv.forward(h)))
        out = self.out_conv.forward(f)
        return np.ascontiguousarray(out.transpose(0, 2, 1))[:, :L]

    def backward(self, dout):
        B, L, d = dout.shape
        pad = (-L) % 4
        if pad:
            dout = np.concatenate([dout, np.zeros((B, pad, d), dtype=dout.dtype)], axis=1)
        dh = np.ascontiguousarray(dout.transpose(0, 2, 1))
        df = self.out_conv.backward(dh)
        dh = self.final_conv.backward(self.final_gn.backward(self.final_act.backward(df)))
        dte = None
        for blk in reversed(self.blocks):
            dh, dt = blk.backward(dh)
            dte = dt if dte is None else dte + dt
        dx = self.in_conv.backward(dh)
        self.tmlp1.backward(self.tact.backward(self.tmlp2.backward(dte)))
        dx = np.ascontiguousarray(dx.transpose(0, 2, 1))
        if self._pad_src is not None:
            core = dx[:, :L].copy()
            np.add.at(core, (slice(None), self._pad_src), dx[:, L:])
            return core
        return dx


class EpsLossModel:
    """Mean-squared epsilon-prediction error of a Denoiser on a fixed batch."""

    def __init__(self, model: Denoiser):
        self.model = model

    @property
    def store(self):
        return self.model.store

    def loss_and_grad(self, batch):
        x_t, t, eps = batch
        pred = self.model.forward(x_t, t)
        r = (pred.astype(np.float64) - eps).astype(pred.dtype)
        loss = float(np.mean(r.astype(np.float64) ** 2))
        self.model.backward(2.0 * r / r.size)
        return loss

    def loss_only(self, batch):
        x_t, t, eps = batch
        pred = self.model.forward(x_t, t)
        return float(np.mean((pred.astype(np.float64) - eps) ** 2))


# ---------------------------------------------------------------------------
# training

@dataclass
class PlannerTrainConfig:
    steps: int = 200_000
    batch: int = 32
    lr: float = 2e-4
    grad_clip: float = 1.0
    l_min: int = 16
    t_max: int = 192
    fixed_horizon: int | None = None  # constant crop length baseline mode


@dataclass
class PlannerBundle:
    model: Denoiser
    sched: NoiseSchedule
    cfg: DenoiserConfig
    train_cfg: PlannerTrainConfig


def _to_z(states_norm):
    return (2.0 * np.asarray(states_norm, dtype=np.float32) - 1.0)


def sample_crop_batch(episodes_z, lengths, cfg: PlannerTrainConfig,
                      rng: np.random.Generator):
    """A batch of equal-length crops.

    Variable mode draws L as crop_random would for one random episode
    (uniform over {l_min .. min(T, t_max)}), then fills the batch with crops
    of that L from episodes long enough to hold it.
    """
    if cfg.fixed_horizon is not None:
        L = cfg.fixed_horizon
    else:
        t0 = lengths[rng.integers(len(lengths))]
        L = int(rng.integers(cfg.l_min, min(int(t0), cfg.t_max) + 1))
    eligible = np.nonzero(lengths >= L)[0]
    if eligible.size == 0:
        raise ValueError(f"no episode can hold a length-{L} crop")
    out = np.empty((cfg.batch, L, 4), dtype=np.float32)
    for b in range(cfg.batch):
        ep = episodes_z[int(eligible[rng.integers(eligible.size)])]
        i = int(rng.integers(0, len(ep) - L + 1))
        out[b] = ep[i:i + L]
    return out, L


def planner_training_step(loss_model: EpsLossModel, sched: NoiseSchedule,
                          episodes_z, lengths, cfg: PlannerTrainConfig,
                          adam: nn.Adam, rng: np.random.Generator):
    """One epsilon-loss update on a fresh crop batch; returns (loss, L).

    The crop's first and last rows enter the model clean, with a zero noise
    target, mirroring the sampler, which rewrites those two rows after every
    reverse step. A model trained only on fully noised inputs never learns
    to read the clamped rows as anchors, and its samples connect to neither
    endpoint.
    """
    x0, L = sample_crop_batch(episodes_z, lengths, cfg, rng)
    t = rng.integers(1, sched.t_diff + 1, size=cfg.batch)
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    eps[:, 0] = 0.0
    eps[:, -1] = 0.0
    x_t = q_sample(x0, t, eps, sched)
    x_t = condition_endpoints(x_t, x0[:, 0], x0[:, -1])
    loss_model.store.zero_grads()
    loss = loss_model.loss_and_grad((x_t, t, eps))
    adam.step()
    return loss, L


def train_planner(episodes_norm, den_cfg: DenoiserConfig,
                  cfg: PlannerTrainConfig, seed: int, progress=None,
                  log_every: int = 500) -> tuple[PlannerBundle, list]:
    """Train a denoiser on normalized episodes; returns (bundle, history)."""
    floor = cfg.fixed_horizon if cfg.fixed_horizon is not None else cfg.l_min
    episodes_z = [_to_z(e) for e in episodes_norm if len(e) >= floor]
    if not episodes_z:
        raise ValueError(f"no episodes of length >= {floor}")
    lengths = np.array([len(e) for e in episodes_z])
    rng = np.random.default_rng(np.random.SeedSequence([seed, 21]))
    model = Denoiser(den_cfg, np.random.default_rng(np.random.SeedSequence([seed, 22])))
    sched = cosine_schedule(den_cfg.t_diff)
    adam = nn.Adam(model.store, cfg.lr, clip_norm=cfg.grad_clip)
    loss_model = EpsLossModel(model)
    history = []
    diverged = 0
    for step in range(cfg.steps):
        loss, L = planner_training_step(
            loss_model, sched, episodes_z, lengths, cfg, adam, rng
        )
        diverged = diverged + 1 if loss > 1e3 else 0
        if diverged >= 100:
            raise RuntimeError(f"planner training diverged at step {step}: {loss:.3e}")
        if step % log_every == 0 or step == cfg.steps - 1:
            row = {"step": step, "loss": loss, "crop": L}
            history.append(row)
            if progress:
                progress(row)
    return PlannerBundle(model=model, sched=sched, cfg=den_cfg, train_cfg=cfg), history


# ---------------------------------------------------------------------------
# sampling

@dataclass
class Plan:
    states: np.ndarray  # (L, 4) normalized [0,1]
    horizon: int


def plan_batch(model: Denoiser, sched: NoiseSchedule, s_norm, g_norm, L: int,
               rngs) -> np.ndarray:
    """Reverse-sample B endpoint-clamped plans of one shared length L.

    Each instance draws its noise from its own generator, so results do not
    depend on how instances are grouped into batches. Returns (B, L, 4) in
    [0,1] with rows 0 and L-1 set to the exact requested endpoints.
    """
    s_norm = np.atleast_2d(np.asarray(s_norm, dtype=np.float32))
    g_norm = np.atleast_2d(np.asarray(g_norm, dtype=np.float32))
    B = len(s_norm)
    if len(rngs) != B:
        raise ValueError("need one rng per instance")
    zs = 2.0 * s_norm - 1.0
    zg = 2.0 * g_norm - 1.0
    tau = np.stack([r.standard_normal((L, 4)) for r in rngs]).astype(np.float32)
    tau = condition_endpoints(tau, zs, zg)
    t_vec = np.empty(B, dtype=np.int64)
    for t in range(sched.t_diff, 0, -1):
        t_vec[:] = t
        eps_hat = model.forward(tau, t_vec)
        eps_hat = clip_denoised(tau, eps_hat, t_vec, sched)
        if t > 1:
            z = np.stack([r.standard_normal((L, 4)) for r in rngs]).astype(np.float32)
        else:
            z = np.zeros_like(tau)
        tau = posterior_step(tau, eps_hat, t_vec, sched, z)
        tau = condition_endpoints(tau, zs, zg)
        if not np.isfinite(tau).all():
            raise PlanningError(f"non-finite sample at reverse step {t}")
    x = (tau + 1.0) / 2.0
    x[:, 0] = s_norm
    x[:, -1] = g_norm
    return x.astype(np.float32)


def plan(model: Denoiser, sched: NoiseSchedule, s_norm, g_norm, L: int,
         rng: np.random.Generator) -> Plan:
    """Single endpoint-conditioned plan of length L (normalized units)."""
    if L < 2:
        raise ValueError("plans need at least 2 rows")
    states = plan_batch(model, sched, s_norm, g_norm, L, [rng])[0]
    return Plan(states=states, horizon=L)


# ---------------------------------------------------------------------------
# checkpoints

def save_planner(path, bundle: PlannerBundle, extra: dict | None = None):
    arrays = bundle.model.store.state_dict()
    c = bundle.cfg
    echo = {
        "kind": "planner",
        "state_dim": c.state_dim,
        "channels": c.channels,
        "blocks": c.blocks,
        "kernel": c.kernel,
        "groups": c.groups,
        "temb_dim": c.temb_dim,
        "dilations": list(c.dilations),
        "t_diff": c.t_diff,
        "l_min": bundle.train_cfg.l_min,
        "t_max": bundle.train_cfg.t_max,
        "fixed_horizon": bundle.train_cfg.fixed_horizon,
    }
    if extra:
        echo.update(extra)
    nn.save_arrays(path, arrays, echo)


def load_planner(path) -> PlannerBundle:
    arrays, echo = nn.load_arrays(path)
    if echo.get("kind") != "planner":
        raise nn.CheckpointFormatError(f"not a planner checkpoint: {path}")
    cfg = DenoiserConfig(
        state_dim=int(echo["state_dim"]),
        channels=int(echo["channels"]),
        blocks=int(echo["blocks"]),
        kernel=int(echo["kernel"]),
        groups=int(echo["groups"]),
        temb_dim=int(echo["temb_dim"]),
        dilations=tuple(echo["dilations"]),
        t_diff=int(echo["t_diff"]),
    )
    model = Denoiser(cfg, np.random.default_rng(0))
    model.store.load_state_dict(arrays)
    train_cfg = PlannerTrainConfig(
        l_min=int(echo["l_min"]),
        t_max=int(echo["t_max"]),
        fixed_horizon=echo.get("fixed_horizon"),
    )
    return PlannerBundle(model=model, sched=cosine_schedule(cfg.t_diff),
                         cfg=cfg, train_cfg=train_cfg)
