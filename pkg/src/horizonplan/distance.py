"""Learned step-distance between normalized state pairs, and the horizon map.

The model f(s, g) predicts the normalized number of control steps needed to
move from s into the goal box of g. Training combines Huber regression on
scanned-hit / bootstrapped anchor targets with hinge penalties that keep
predictions under dynamic-programming and triangle upper bounds evaluated
through an EMA copy (targets carry no gradient), plus boundary and overflow
terms. A three-phase curriculum widens goal sampling and turns on relay
mining as training progresses.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Linear, LayerNorm, ReLU, Softplus, collect_params


@dataclass(frozen=True)
class PhaseConfig:
    steps: int
    goal_mix: tuple[float, float, float]  # endpoint, local future, global
    k_set: tuple[int, ...]
    relay_prob: float
    mine_m: int  # pool candidates per relay; 1 = plain random draw
    cons_scale: float  # multiplier on w_cons at end of ramp
    tri_scale: float


def default_phases() -> tuple[PhaseConfig, ...]:
    return (
        PhaseConfig(10_000, (0.1, 0.8, 0.1), (1, 2), 0.0, 1, 0.0, 0.0),
        PhaseConfig(20_000, (0.2, 0.5, 0.3), (1, 2, 4, 8), 0.3, 1, 1.0, 0.5),
        PhaseConfig(20_000, (0.3, 0.3, 0.4), (1, 2, 4, 8), 0.6, 16, 1.0, 1.0),
    )


@dataclass
class PredictorConfig:
    t_max: int
    eps: float
    goal_mask: tuple[int, ...] = (0, 1)
    rff_features: int = 128
    rff_sigma: float = 1.0
    hidden: tuple[int, ...] = (256, 256, 256)
    huber_kappa: float = 0.1
    w_cons: float = 1.0
    w_tri: float = 0.5
    w_bdry: float = 0.1
    w_clip: float = 0.1
    lr: float = 1e-3
    batch: int = 64
    ema_decay: float = 0.995
    grad_clip: float = 1.0
    pool_size: int = 256
    ramp_steps: int = 2000
    phases: tuple[PhaseConfig, ...] = field(default_factory=default_phases)


class DistanceModel:
    """Random-Fourier-feature MLP with a softplus head; output is (B,)."""

    def __init__(self, cfg: PredictorConfig, rng: np.random.Generator):
        self.cfg = cfg
        F = cfg.rff_features
        self.B = rng.normal(0.0, cfg.rff_sigma, (4, F)).astype(np.float32)
        zdim = 3 * (2 * F + 4)
        layers = []
        d = zdim
        for i, h in enumerate(cfg.hidden):
            layers += [Linear(d, h, f"fc{i}", rng), LayerNorm(h, f"ln{i}"), ReLU()]
            d = h
        layers += [Linear(d, 1, "head", rng, w_scale=1e-2), Softplus()]
        self.layers = layers
        self.store = collect_params(layers)

    def _rff(self, x):
        ang = 2.0 * np.pi * (x @ self.B)
        return np.concatenate([np.sin(ang), np.cos(ang), x], axis=-1)

    def encode(self, s, g):
        ps = self._rff(np.asarray(s, dtype=np.float32))
        pg = self._rff(np.asarray(g, dtype=np.float32))
        return np.concatenate([ps, pg, ps - pg], axis=-1)

    def forward_z(self, z):
        h = z
        for layer in self.layers:
            h = layer.forward(h)
        return h[:, 0]

    def backward(self, dpred):
        dy = dpred[:, None]
        for layer in reversed(self.layers):
            dy = layer.backward(dy)

    def predict(self, s, g):
        """Plain forward on (N, 4) pairs; returns (N,)."""
        return self.forward_z(self.encode(np.atleast_2d(s), np.atleast_2d(g)))

    def clone(self) -> "DistanceModel":
        m = DistanceModel(self.cfg, np.random.default_rng(0))
        m.B = self.B.copy()
        m.store.load_state_dict(self.store.state_dict())
        return m


# ---------------------------------------------------------------------------
# pair sampling

@dataclass
class PairBatch:
    s: np.ndarray  # (B, 4)
    g: np.ndarray  # (B, 4)
    hit: np.ndarray  # (B,) bool
    k: np.ndarray  # (B,) int32
    s_k: np.ndarray  # (B, 4)

    def subset(self, idx):
        return PairBatch(self.s[idx], self.g[idx], self.hit[idx],
                         self.k[idx], self.s_k[idx])


def sample_pair_batch(episodes, cfg: PredictorConfig, phase: PhaseConfig,
                      rng: np.random.Generator, batch_size: int) -> PairBatch:
    """Draw (s, g) pairs with scanned-hit or sampled-offset anchors.

    episodes: list of (T, 4) normalized state arrays, each T >= 2. Goals come
    from the sample's own endpoint, a local future state, or any state of any
    episode, per the phase mixture. A hit records the smallest future offset
    whose masked l-inf gap is within eps; a miss samples k from the phase set
    and takes the k-step successor clipped to the episode end.
    """
    n = len(episodes)
    mask = list(cfg.goal_mask)
    mix = np.asarray(phase.goal_mix, dtype=np.float64)
    mix = mix / mix.sum()
    kinds = rng.choice(3, size=batch_size, p=mix)
    k_set = np.asarray(phase.k_set, dtype=np.int64)

    s = np.empty((batch_size, 4), dtype=np.float32)
    g = np.empty((batch_size, 4), dtype=np.float32)
    hit = np.zeros(batch_size, dtype=bool)
    k = np.zeros(batch_size, dtype=np.int32)
    s_k = np.empty((batch_size, 4), dtype=np.float32)

    for b in range(batch_size):
        ep = episodes[rng.integers(n)]
        T = len(ep)
        t = int(rng.integers(0, T - 1))
        w_end = min(t + cfg.t_max, T - 1)
        if kinds[b] == 0:
            gb = ep[T - 1]
        elif kinds[b] == 1:
            gb = ep[int(rng.integers(t + 1, w_end + 1))]
        else:
            other = episodes[rng.integers(n)]
            gb = other[int(rng.integers(0, len(other)))]
        s[b] = ep[t]
        g[b] = gb
        if np.max(np.abs(ep[t][mask] - gb[mask])) <= cfg.eps:
            hit[b] = True
            k[b] = 0
        else:
            win = ep[t + 1:w_end + 1]
            near = np.max(np.abs(win[:, mask] - gb[mask]), axis=1) <= cfg.eps
            first = np.argmax(near) if near.any() else -1
            if first >= 0:
                hit[b] = True
                k[b] = first + 1
            else:
                k[b] = int(k_set[rng.integers(len(k_set))])
        s_k[b] = ep[min(t + int(k[b]), T - 1)]
    return PairBatch(s=s, g=g, hit=hit, k=k, s_k=s_k)


def mine_relay(batch: PairBatch, pool, ema_model: DistanceModel, mode: str,
               rng: np.random.Generator, m: int = 1) -> np.ndarray:
    """Relay states for the triangle bound.

    on_trajectory: the k-step successor. semi_hard: of m pooled candidates,
    the one minimizing the EMA bound f(s,h) + f(h,g); m=1 degenerates to a
    plain pool draw. Empty pool falls back to the successor.
    """
    if mode == "on_trajectory" or len(pool) == 0:
        return batch.s_k.copy()
    if mode != "semi_hard":
        raise ValueError(f"unknown relay mode {mode!r}")
    B = len(batch.s)
    cand = pool[rng.integers(len(pool), size=(B, m))]
    cflat = cand.reshape(B * m, 4)
    s_rep = np.repeat(batch.s, m, axis=0)
    g_rep = np.repeat(batch.g, m, axis=0)
    f = ema_model.predict(np.concatenate([s_rep, cflat]),
                          np.concatenate([cflat, g_rep]))
    bound = (f[:B * m] + f[B * m:]).reshape(B, m)
    return cand[np.arange(B), bound.argmin(axis=1)]


@dataclass
class Targets:
    y: np.ndarray  # (B,) regression target
    bound_dp: np.ndarray  # (B,) DP upper bound, via EMA
    bound_tri: np.ndarray  # (B,) triangle upper bound, via EMA


def compute_target(batch: PairBatch, h: np.ndarray, ema_model: DistanceModel,
                   t_max: int) -> Targets:
    """Anchor/bootstrap targets and hinge bounds; all EMA terms constant."""
    B = len(batch.s)
    rows_a = np.concatenate([batch.s_k, batch.s, h])
    rows_b = np.concatenate([batch.g, h, batch.g])
    f = ema_model.predict(rows_a, rows_b).astype(np.float64)
    f_succ, f_sh, f_hg = f[:B], f[B:2 * B], f[2 * B:]
    kk = batch.k.astype(np.float64) / t_max
    bound_dp = np.minimum(1.0, kk + f_succ)
    y = np.where(batch.hit, np.minimum(1.0, kk), bound_dp)
    bound_tri = np.minimum(1.0, f_sh + f_hg)
    return Targets(y=y, bound_dp=bound_dp, bound_tri=bound_tri)


# ---------------------------------------------------------------------------
# losses

@dataclass
class LossParts:
    total: float
    td: float
    cons: float
    tri: float
    bdry: float
    clip: float


def assemble_losses(pred, bdry_pred, targets: Targets, kappa,
                    w_cons, w_tri, w_bdry, w_clip):
    """Loss arithmetic in float64; returns (parts, dpred, dbdry).

    Gradients flow only through pred and bdry_pred; the bound arrays are
    constants, so inactive hinges contribute exactly zero gradient.
    """
    p = pred.astype(np.float64)
    bp = bdry_pred.astype(np.float64)
    B = len(p)
    r = p - targets.y
    ar = np.abs(r)
    quad = ar <= kappa
    td = float(np.where(quad, 0.5 * r * r, kappa * (ar - 0.5 * kappa)).mean())
    c = np.maximum(0.0, p - targets.bound_dp)
    cons = float((c * c).mean())
    tv = np.maximum(0.0, p - targets.bound_tri)
    tri = float((tv * tv).mean())
    bdry = float((bp * bp).mean())
    cl = np.maximum(0.0, p - 1.0)
    clip = float((cl * cl).mean())
    parts = LossParts(
        total=td + w_cons * cons + w_tri * tri + w_bdry * bdry + w_clip * clip,
        td=td, cons=cons, tri=tri, bdry=bdry, clip=clip,
    )
    for term in ("td", "cons", "tri", "bdry", "clip"):
        if not np.isfinite(getattr(parts, term)):
            raise nn.NonFiniteLossError(f"{term} loss is non-finite")
    dtd = np.where(quad, r, kappa * np.sign(r))
    dpred = (dtd + w_cons * 2 * c + w_tri * 2 * tv + w_clip * 2 * cl) / B
    dbdry = w_bdry * 2 * bp / B
    return parts, dpred.astype(pred.dtype), dbdry.astype(bdry_pred.dtype)


def compute_losses(model: DistanceModel, batch: PairBatch, targets: Targets,
                   kappa, w_cons, w_tri, w_bdry, w_clip) -> LossParts:
    """One forward/backward over the composite objective.

    The boundary term rides in the same forward as a second half-batch of
    (g, g) pairs so every layer sees exactly one forward per backward.
    """
    model.store.zero_grads()
    z = np.concatenate([model.encode(batch.s, batch.g),
                        model.encode(batch.g, batch.g)])
    out = model.forward_z(z)
    B = len(batch.s)
    parts, dpred, dbdry = assemble_losses(
        out[:B], out[B:], targets, kappa, w_cons, w_tri, w_bdry, w_clip
    )
    model.backward(np.concatenate([dpred, dbdry]))
    return parts


class PairLossModel:
    """grad_check adapter: composite loss as a pure function of the weights."""

    def __init__(self, model: DistanceModel, kappa, w_cons, w_tri, w_bdry, w_clip):
        self.model = model
        self.w = (kappa, w_cons, w_tri, w_bdry, w_clip)

    @property
    def store(self):
        return self.model.store

    def _forward(self, batch):
        pbatch, targets = batch
        z = np.concatenate([self.model.encode(pbatch.s, pbatch.g),
                            self.model.encode(pbatch.g, pbatch.g)])
        out = self.model.forward_z(z)
        B = len(pbatch.s)
        return out[:B], out[B:]

    def loss_and_grad(self, batch):
        pbatch, targets = batch
        pred, bdry = self._forward(batch)
        parts, dpred, dbdry = assemble_losses(pred, bdry, targets, *self.w[:1],
                                              *self.w[1:])
        self.model.backward(np.concatenate([dpred, dbdry]))
        return parts.total

    def loss_only(self, batch):
        pbatch, targets = batch
        pred, bdry = self._forward(batch)
        parts, _, _ = assemble_losses(pred, bdry, targets, *self.w[:1], *self.w[1:])
        return parts.total


# ---------------------------------------------------------------------------
# training

@dataclass
class DistanceBundle:
    model: DistanceModel
    ema_model: DistanceModel
    cfg: PredictorConfig


def _phase_at(phases, ramp_steps, step):
    """(phase, cons_scale, tri_scale) with linear ramps at phase entry."""
    start = 0
    prev_cons = prev_tri = 0.0
    for ph in phases:
        if step < start + ph.steps:
            u = min(1.0, (step - start) / max(ramp_steps, 1))
            cons = prev_cons + (ph.cons_scale - prev_cons) * u
            tri = prev_tri + (ph.tri_scale - prev_tri) * u
            return ph, cons, tri
        start += ph.steps
        prev_cons, prev_tri = ph.cons_scale, ph.tri_scale
    ph = phases[-1]
    return ph, ph.cons_scale, ph.tri_scale


def train_distance_model(episodes, cfg: PredictorConfig, seed: int,
                         progress=None, log_every: int = 1000):
    """Full curriculum training; episodes are normalized state arrays.

    Returns (DistanceBundle, history) where history rows are dicts of loss
    parts. Aborts if the total loss stays above 1e3 for 100 straight steps.
    """
    episodes = [np.asarray(e, dtype=np.float32) for e in episodes if len(e) >= 2]
    if not episodes:
        raise ValueError("need at least one episode of length >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    model = DistanceModel(cfg, np.random.default_rng(np.random.SeedSequence([seed, 12])))
    ema_model = model.clone()
    ema = nn.Ema(model.store, ema_model.store, cfg.ema_decay)
    adam = nn.Adam(model.store, cfg.lr, clip_norm=cfg.grad_clip)
    flat = np.concatenate(episodes).astype(np.float32)

    total = sum(p.steps for p in cfg.phases)
    history = []
    diverged = 0
    rejects = 0
    for step in range(total):
        phase, cons_s, tri_s = _phase_at(cfg.phases, cfg.ramp_steps, step)
        batch = sample_pair_batch(episodes, cfg, phase, rng, cfg.batch)
        h = batch.s_k.copy()
        if phase.relay_prob > 0:
            use = rng.random(cfg.batch) < phase.relay_prob
            if use.any():
                pool = flat[rng.integers(len(flat), size=cfg.pool_size)]
                h[use] = mine_relay(batch.subset(use), pool, ema_model,
                                    "semi_hard", rng, m=phase.mine_m)
        targets = compute_target(batch, h, ema_model, cfg.t_max)
        parts = compute_losses(
            model, batch, targets, cfg.huber_kappa,
            cfg.w_cons * cons_s, cfg.w_tri * tri_s, cfg.w_bdry, cfg.w_clip,
        )
        if not adam.step():
            rejects += 1
        ema.update()
        diverged = diverged + 1 if parts.total > 1e3 else 0
        if diverged >= 100:
            raise RuntimeError(
                f"distance training diverged at step {step}: "
                f"total={parts.total:.3e} td={parts.td:.3e} cons={parts.cons:.3e}"
            )
        if step % log_every == 0 or step == total - 1:
            row = {"step": step, "total": parts.total, "td": parts.td,
                   "cons": parts.cons, "tri": parts.tri, "bdry": parts.bdry,
                   "clip": parts.clip, "rejects": rejects}
            history.append(row)
            if progress:
                progress(row)
    return DistanceBundle(model=model, ema_model=ema_model, cfg=cfg), history


# ---------------------------------------------------------------------------
# horizon map and audits

@dataclass
class HorizonConfig:
    t_max: int
    gamma: float = 1.15
    l_min: int = 16


def predict_horizon(model: DistanceModel, hcfg: HorizonConfig, s, g) -> np.ndarray:
    """Planning horizons: round-half-up of gamma*(f*t_max + 1), clamped."""
    f = model.predict(s, g).astype(np.float64)
    raw = np.floor(hcfg.gamma * (f * hcfg.t_max + 1.0) + 0.5)
    return np.clip(raw, hcfg.l_min, hcfg.t_max).astype(np.int64)


def make_bound_probes(episodes, rng: np.random.Generator, n: int,
                      k_set=(1, 2, 4, 8)) -> PairBatch:
    """Cross-episode DP probes: s and its k-step successor from one episode,
    goal from another. hit is left False; k is the sampled offset."""
    episodes = [np.asarray(e) for e in episodes if len(e) >= 2]
    ks = np.asarray(k_set)
    s = np.empty((n, 4), dtype=np.float32)
    g = np.empty((n, 4), dtype=np.float32)
    k = np.zeros(n, dtype=np.int32)
    s_k = np.empty((n, 4), dtype=np.float32)
    for b in range(n):
        i = int(rng.integers(len(episodes)))
        ep = episodes[i]
        t = int(rng.integers(0, len(ep) - 1))
        k[b] = int(ks[rng.integers(len(ks))])
        s[b] = ep[t]
        s_k[b] = ep[min(t + int(k[b]), len(ep) - 1)]
        if len(episodes) > 1:
            j = int(rng.integers(len(episodes) - 1))
            other = episodes[j + 1 if j >= i else j]
        else:
            other = ep
        g[b] = other[int(rng.integers(len(other)))]
    return PairBatch(s=s, g=g, hit=np.zeros(n, dtype=bool), k=k, s_k=s_k)


def bound_violation_rate(model: DistanceModel, ema_model: DistanceModel,
                         probes: PairBatch, t_max: int, slack: float = 0.05) -> float:
    """Fraction of probes where f exceeds the DP upper bound by > slack."""
    f = model.predict(probes.s, probes.g).astype(np.float64)
    f_succ = ema_model.predict(probes.s_k, probes.g).astype(np.float64)
    bound = np.minimum(1.0, probes.k.astype(np.float64) / t_max + f_succ)
    return float(np.mean(f > bound + slack))


def average_ranks(x) -> np.ndarray:
    """Ranks with ties averaged (1-based)."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    ranks[order] = np.arange(1, len(x) + 1)
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    sums = np.zeros(counts.shape)
    np.add.at(sums, inv, ranks)
    return sums[inv] / counts[inv]


def rank_correlation(a, b) -> float:
    """Spearman correlation via average ranks."""
    ra, rb = average_ranks(a), average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    return float((ra * rb).sum() / denom) if denom > 0 else 0.0


# ---------------------------------------------------------------------------
# checkpoints

def save_distance(path, bundle: DistanceBundle, extra: dict | None = None):
    arrays = {"buffer.rff": bundle.model.B}
    arrays.update(bundle.model.store.state_dict())
    arrays.update({f"ema.{k}": v for k, v in bundle.ema_model.store.state_dict().items()})
    cfg = bundle.cfg
    echo = {
        "kind": "distance",
        "t_max": cfg.t_max,
        "eps": cfg.eps,
        "goal_mask": list(cfg.goal_mask),
        "rff_features": cfg.rff_features,
        "rff_sigma": cfg.rff_sigma,
        "hidden": list(cfg.hidden),
    }
    if extra:
        echo.update(extra)
    nn.save_arrays(path, arrays, echo)


def load_distance(path) -> DistanceBundle:
    arrays, echo = nn.load_arrays(path)
    if echo.get("kind") != "distance":
        raise nn.CheckpointFormatError(f"not a distance checkpoint: {path}")
    cfg = PredictorConfig(
        t_max=int(echo["t_max"]),
        eps=float(echo["eps"]),
        goal_mask=tuple(echo["goal_mask"]),
        rff_features=int(echo["rff_features"]),
        rff_sigma=float(echo["rff_sigma"]),
        hidden=tuple(echo["hidden"]),
    )
    model = DistanceModel(cfg, np.random.default_rng(0))
    model.B = arrays["buffer.rff"].astype(np.float32)
    model.store.load_state_dict(
        {k: v for k, v in arrays.items() if not k.startswith(("ema.", "buffer."))}
    )
    ema_model = DistanceModel(cfg, np.random.default_rng(0))
    ema_model.B = model.B.copy()
    ema_model.store.load_state_dict(
        {k[4:]: v for k, v in arrays.items() if k.startswith("ema.")}
    )
    return DistanceBundle(model=model, ema_model=ema_model, cfg=cfg)
