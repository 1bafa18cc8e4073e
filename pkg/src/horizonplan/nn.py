"""Numpy neural substrate: static layer graphs with hand-derived backwards.

Parameters and activations are float32; loss arithmetic is done in float64
by the callers. Layers cache what their backward needs, so each forward is
paired with exactly one backward. Gradients accumulate into Param.grad and
are cleared by ParamStore.zero_grads().
"""

import json
import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteLossError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape})"


class ParamStore:
    """Ordered, name-addressed collection of trainable parameters."""

    def __init__(self, params):
        self._params: dict[str, Param] = {}
        for p in params:
            if p.name in self._params:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            self._params[p.name] = p

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def names(self):
        return list(self._params)

    def n_elements(self) -> int:
        return sum(p.value.size for p in self)

    def zero_grads(self):
        for p in self:
            p.grad[...] = 0

    def grads_finite(self) -> bool:
        return all(np.isfinite(p.grad).all() for p in self)

    def global_grad_norm(self) -> float:
        sq = 0.0
        for p in self:
            g = p.grad.astype(np.float64, copy=False)
            sq += float(np.dot(g.ravel(), g.ravel()))
        return float(np.sqrt(sq))

    def clip_global_grad_norm(self, max_norm: float) -> float:
        norm = self.global_grad_norm()
        if norm > max_norm and norm > 0:
            scale = max_norm / norm
            for p in self:
                p.grad *= scale
        return norm

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def load_state_dict(self, d: dict[str, np.ndarray]):
        missing = set(self._params) - set(d)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for p in self:
            a = np.asarray(d[p.name])
            if a.shape != p.value.shape:
                raise ValueError(
                    f"{p.name}: shape {a.shape} != expected {p.value.shape}"
                )
            p.value = a.astype(p.value.dtype).copy()
            p.grad = np.zeros_like(p.value)

    def cast(self, dtype):
        for p in self:
            p.value = p.value.astype(dtype)
            p.grad = p.grad.astype(dtype)


class Adam:
    """Bias-corrected Adam over a ParamStore, with optional global-norm clip.

    step() refuses non-finite gradients: no parameter changes, the step
    counter stays put, and it returns False so callers can count rejects.
    """

    def __init__(self, store: ParamStore, lr, beta1=0.9, beta2=0.999,
                 eps=1e-8, clip_norm=None):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in store}
        self.v = {p.name: np.zeros_like(p.value) for p in store}

    def step(self) -> bool:
        if not self.store.grads_finite():
            return False
        if self.clip_norm is not None:
            self.store.clip_global_grad_norm(self.clip_norm)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.store:
            m = self.m[p.name]
            v = self.v[p.name]
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


class Ema:
    """Exponential moving average of a store, written into a mirror store.

    The mirror is typically the ParamStore of a structurally identical
    model, so the averaged weights are directly usable for inference.
    """

    def __init__(self, src: ParamStore, mirror: ParamStore, decay: float):
        if src.names() != mirror.names():
            raise ValueError("ema mirror must have identical parameter names")
        self.src = src
        self.mirror = mirror
        self.decay = decay
        for p in mirror:
            p.value[...] = src[p.name].value

    def update(self):
        d = self.decay
        for p in self.mirror:
            p.value *= d
            p.value += (1.0 - d) * self.src[p.name].value


# ---------------------------------------------------------------------------
# layers


class Linear:
    def __init__(self, d_in, d_out, name, rng, w_scale=None, zero=False):
        if zero:
            w = np.zeros((d_in, d_out))
        else:
            scale = w_scale if w_scale is not None else np.sqrt(2.0 / d_in)
            w = rng.normal(0.0, scale, (d_in, d_out))
        self.w = Param(f"{name}.w", w.astype(np.float32))
        self.b = Param(f"{name}.b", np.zeros(d_out, dtype=np.float32))
        self._x = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy):
        x = self._x
        self.w.grad += x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.value.T


class ReLU:
    def params(self):
        return []

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class SiLU:
    def params(self):
        return []

    def forward(self, x):
        self._x = x
        self._sig = 1.0 / (1.0 + np.exp(-x))
        return x * self._sig

    def backward(self, dy):
        s = self._sig
        return dy * (s * (1.0 + self._x * (1.0 - s)))


class Softplus:
    def params(self):
        return []

    def forward(self, x):
        self._sig = 1.0 / (1.0 + np.exp(-x))
        return np.logaddexp(0.0, x)

    def backward(self, dy):
        return dy * self._sig


class LayerNorm:
    def __init__(self, dim, name, eps=1e-5):
        self.gamma = Param(f"{name}.gamma", np.ones(dim, dtype=np.float32))
        self.beta = Param(f"{name}.beta", np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        return self.gamma.value * self._xhat + self.beta.value

    def backward(self, dy):
        xhat = self._xhat
        self.gamma.grad += (dy * xhat).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        du = dy * self.gamma.value
        m1 = du.mean(axis=-1, keepdims=True)
        m2 = (du * xhat).mean(axis=-1, keepdims=True)
        return self._inv * (du - m1 - xhat * m2)


class GroupNorm:
    """Normalizes (B, C, L) inputs over channel groups."""

    def __init__(self, channels, groups, name, eps=1e-5):
        if channels % groups:
            raise ValueError("channels must divide evenly into groups")
        self.groups = groups
        self.eps = eps
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=np.float32))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=np.float32))

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x):
        B, C, L = x.shape
        G = self.groups
        xg = x.reshape(B, G, (C // G) * L)
        mu = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = ((xg - mu) * inv).reshape(B, C, L)
        self._inv = inv
        self._xhat = xhat
        return self.gamma.value[None, :, None] * xhat + self.beta.value[None, :, None]

    def backward(self, dy):
        B, C, L = dy.shape
        G = self.groups
        xhat = self._xhat
        self.gamma.grad += (dy * xhat).sum(axis=(0, 2))
        self.beta.grad += dy.sum(axis=(0, 2))
        du = (dy * self.gamma.value[None, :, None]).reshape(B, G, (C // G) * L)
        xh = xhat.reshape(B, G, (C // G) * L)
        m1 = du.mean(axis=2, keepdims=True)
        m2 = (du * xh).mean(axis=2, keepdims=True)
        dx = self._inv * (du - m1 - xh * m2)
        return dx.reshape(B, C, L)


class Conv1d:
    """'Same' zero-padded 1-D convolution on (B, C, L), via im2col GEMM."""

    def __init__(self, c_in, c_out, kernel, name, rng, dilation=1, zero=False):
        if kernel % 2 == 0:
            raise ValueError("kernel must be odd for same-padding")
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.dilation = dilation
        if zero:
            w = np.zeros((c_in * kernel, c_out))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / (c_in * kernel)), (c_in * kernel, c_out))
        self.w = Param(f"{name}.w", w.astype(np.float32))
        self.b = Param(f"{name}.b", np.zeros(c_out, dtype=np.float32))

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        B, C, L = x.shape
        k, d = self.kernel, self.dilation
        span = (k - 1) * d + 1
        pad = (span - 1) // 2
        xp = np.zeros((B, C, L + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + L] = x
        win = sliding_window_view(xp, span, axis=2)[..., ::d]  # (B, C, L, k)
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * L, C * k)
        y = cols @ self.w.value + self.b.value
        self._cols = cols
        self._shape = (B, C, L, pad)
        return np.ascontiguousarray(y.reshape(B, L, self.c_out).transpose(0, 2, 1))

    def backward(self, dy):
        B, C, L, pad = self._shape
        k, d = self.kernel, self.dilation
        dy2 = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(B * L, self.c_out)
        self.w.grad += self._cols.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        dcols = (dy2 @ self.w.value.T).reshape(B, L, C, k).transpose(0, 2, 1, 3)
        dxp = np.zeros((B, C, L + 2 * pad), dtype=dy.dtype)
        for j in range(k):
            dxp[:, :, j * d:j * d + L] += dcols[:, :, :, j]
        return dxp[:, :, pad:pad + L]


class SinusoidalEmbed:
    """Fixed sin/cos embedding of integer timesteps; not trainable."""

    def __init__(self, dim):
        if dim % 2:
            raise ValueError("embedding dim must be even")
        half = dim // 2
        self.freqs = np.exp(
            -np.log(10000.0) * np.arange(half) / max(half - 1, 1)
        ).astype(np.float64)
        self.dim = dim

    def forward(self, t):
        ang = np.asarray(t, dtype=np.float64)[:, None] * self.freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


def collect_params(layers) -> ParamStore:
    out = []
    for layer in layers:
        out.extend(layer.params())
    return ParamStore(out)


# ---------------------------------------------------------------------------
# generic training utilities


def value_and_grad(model, batch):
    """Evaluate a loss model: returns (loss, {name: grad array}).

    The model contract: a `store` attribute plus loss_and_grad(batch) that
    runs forward and backward, and loss_only(batch) for plain evaluation.
    """
    model.store.zero_grads()
    loss = float(model.loss_and_grad(batch))
    if not np.isfinite(loss):
        raise NonFiniteLossError("loss is non-finite")
    return loss, {p.name: p.grad for p in model.store}


def grad_check(model, batch, h=1e-5, n_entries=30, rng=None) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Runs the model in float64 (restoring the original dtype afterwards) so
    finite differences are not drowned by float32 rounding. The small default
    step keeps the probe window clear of piecewise-linear kinks (ReLU,
    hinges); float64 evaluation makes it accurate anyway.
    """
    rng = rng or np.random.default_rng(0)
    store = model.store
    orig_dtypes = {p.name: p.value.dtype for p in store}
    store.cast(np.float64)
    try:
        _, grads = value_and_grad(model, batch)
        grads = {k: v.copy() for k, v in grads.items()}
        names = store.names()
        worst = 0.0
        for _ in range(n_entries):
            name = names[rng.integers(len(names))]
            p = store[name]
            idx = int(rng.integers(p.value.size))
            old = p.value.flat[idx]
            p.value.flat[idx] = old + h
            lp = float(model.loss_only(batch))
            p.value.flat[idx] = old - h
            lm = float(model.loss_only(batch))
            p.value.flat[idx] = old
            fd = (lp - lm) / (2 * h)
            an = float(grads[name].flat[idx])
            err = abs(fd - an) / max(1e-6, abs(fd), abs(an))
            worst = max(worst, err)
        return worst
    finally:
        for p in store:
            p.value = p.value.astype(orig_dtypes[p.name])
            p.grad = np.zeros_like(p.value)


# ---------------------------------------------------------------------------
# checkpoint container

_CKPT_MAGIC = b"NNARRS01"


def save_arrays(path, arrays: dict[str, np.ndarray], config: dict):
    """Write named float32 arrays plus a JSON config echo; bytes are
    deterministic for identical inputs."""
    chunks = [_CKPT_MAGIC, struct.pack("<II", 1, len(arrays))]
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes())
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(cfg)))
    chunks.append(cfg)
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_arrays(path):
    """Inverse of save_arrays: returns (arrays, config)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _CKPT_MAGIC:
        raise CheckpointFormatError(f"bad magic {buf[:8]!r}")
    off = 8
    try:
        version, n = struct.unpack_from("<II", buf, off)
        off += 8
        if version != 1:
            raise CheckpointFormatError(f"unsupported version {version}")
        arrays = {}
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + ln].decode("utf-8")
            off += ln
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            nbytes = count * 4
            if off + nbytes > len(buf):
                raise CheckpointFormatError(
                    f"array {name!r} truncated at byte {off}"
                )
            arrays[name] = np.frombuffer(
                buf, dtype="<f4", count=count, offset=off
            ).reshape(shape).copy()
            off += nbytes
        (clen,) = struct.unpack_from("<I", buf, off)
        off += 4
        config = json.loads(buf[off:off + clen].decode("utf-8"))
    except struct.error as e:
        raise CheckpointFormatError(f"truncated container at byte {off}") from e
    return arrays, config
