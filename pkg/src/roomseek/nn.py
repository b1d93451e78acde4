"""Minimal numpy neural net: conv/linear layers with hand-written backward
passes, the shared-trunk actor-critic used by the high-level policy, Adam,
and a binary checkpoint format.

Everything runs in a configurable dtype: float32 for training speed,
float64 when finite-difference gradient checks need headroom. Forward and
backward are plain matmuls, so results are bit-reproducible for a fixed
BLAS and thread count.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .kernels import col2im, im2col
from .seeding import stream


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 10
    in_size: int = 56
    conv: tuple[tuple[int, int, int], ...] = ((32, 8, 4), (64, 4, 2), (64, 3, 1))
    fc_dim: int = 128
    vec_dim: int = 38
    head_dim: int = 64
    n_actions: int = 12
    dtype: str = "float32"

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


# -- layer primitives -------------------------------------------------------

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    """x (N,C,H,W), w (F,C,kh,kw) -> y (N,F,OH,OW) via im2col matmul."""
    n, c, h, wdt = x.shape
    f, _, kh, kw = w.shape
    oh = (h - kh) // stride + 1
    ow = (wdt - kw) // stride + 1
    cols = np.empty((n * oh * ow, c * kh * kw), dtype=x.dtype)
    im2col(np.ascontiguousarray(x), kh, kw, stride, cols)
    y = cols @ w.reshape(f, -1).T + b
    y = y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    cache = (cols, x.shape, w, stride)
    return y, cache


def conv2d_backward(dy: np.ndarray, cache):
    cols, x_shape, w, stride = cache
    f, c, kh, kw = w.shape
    n, _, h, wdt = x_shape
    dy2 = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(-1, f)
    dw = (dy2.T @ cols).reshape(w.shape)
    db = dy2.sum(axis=0)
    dcols = np.ascontiguousarray(dy2 @ w.reshape(f, -1))
    dx = np.zeros(x_shape, dtype=dy.dtype)
    col2im(dcols, n, c, h, wdt, kh, kw, stride, dx)
    return dx, dw, db


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def linear_backward(dy: np.ndarray, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def relu_forward(x: np.ndarray):
    y = np.maximum(x, 0)
    return y, y


def relu_backward(dy: np.ndarray, y: np.ndarray):
    return dy * (y > 0)


# -- the actor-critic -----------------------------------------------------

class ActorCritic:
    """Conv trunk over the one-hot ego map, fused with the flat state
    vector, feeding separate two-layer policy and value heads."""

    def __init__(self, cfg: NetConfig | None = None, seed: int = 0):
        self.cfg = cfg or NetConfig()
        self.params = self._init_params(seed)

    def _init_params(self, seed: int) -> dict[str, np.ndarray]:
        cfg = self.cfg
        rng = stream(seed, "net-init")
        dt = cfg.np_dtype
        p: dict[str, np.ndarray] = {}

        def he(shape, fan_in, scale=1.0):
            std = scale * np.sqrt(2.0 / fan_in)
            return (rng.standard_normal(shape) * std).astype(dt)

        c_in = cfg.in_channels
        size = cfg.in_size
        for i, (f, k, s) in enumerate(cfg.conv, start=1):
            p[f"c{i}w"] = he((f, c_in, k, k), c_in * k * k)
            p[f"c{i}b"] = np.zeros(f, dtype=dt)
            size = (size - k) // s + 1
            c_in = f
        flat = c_in * size * size
        self._flat_dim = flat
        p["fcw"] = he((flat, cfg.fc_dim), flat)
        p["fcb"] = np.zeros(cfg.fc_dim, dtype=dt)
        joint = cfg.fc_dim + cfg.vec_dim
        for head, outn, final_scale in (("a", cfg.n_actions, 0.01),
                                        ("v", 1, 1.0)):
            p[f"{head}w1"] = he((joint, cfg.head_dim), joint)
            p[f"{head}b1"] = np.zeros(cfg.head_dim, dtype=dt)
            p[f"{head}w2"] = he((cfg.head_dim, cfg.head_dim), cfg.head_dim)
            p[f"{head}b2"] = np.zeros(cfg.head_dim, dtype=dt)
            p[f"{head}w3"] = he((cfg.head_dim, outn), cfg.head_dim,
                                scale=final_scale)
            p[f"{head}b3"] = np.zeros(outn, dtype=dt)
        return p

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, img: np.ndarray, vec: np.ndarray):
        """img (N,C,56,56), vec (N,vec_dim) -> logits (N,A), value (N,).

        Returns a cache for backward; pass cache=None results away when
        only inference is needed.
        """
        p = self.params
        cfg = self.cfg
        cache: dict = {}
        h = img
        for i, (_, _, s) in enumerate(cfg.conv, start=1):
            z, cv = conv2d_forward(h, p[f"c{i}w"], p[f"c{i}b"], s)
            h, r = relu_forward(z)
            cache[f"conv{i}"] = (cv, r)
        n = img.shape[0]
        flat = h.reshape(n, -1)
        cache["flat_shape"] = h.shape
        z, lc = linear_forward(flat, p["fcw"], p["fcb"])
        f, r = relu_forward(z)
        cache["fc"] = (lc, r)
        joint = np.concatenate([f, vec.astype(f.dtype)], axis=1)
        cache["joint"] = joint
        heads = {}
        for head in ("a", "v"):
            z1, l1 = linear_forward(joint, p[f"{head}w1"], p[f"{head}b1"])
            h1, r1 = relu_forward(z1)
            z2, l2 = linear_forward(h1, p[f"{head}w2"], p[f"{head}b2"])
            h2, r2 = relu_forward(z2)
            out, l3 = linear_forward(h2, p[f"{head}w3"], p[f"{head}b3"])
            cache[head] = (l1, r1, l2, r2, l3)
            heads[head] = out
        logits = heads["a"]
        value = heads["v"][:, 0]
        return logits, value, cache

    def backward(self, cache, dlogits: np.ndarray, dvalue: np.ndarray
                 ) -> dict[str, np.ndarray]:
        p = self.params
        cfg = self.cfg
        grads: dict[str, np.ndarray] = {}
        djoint = np.zeros_like(cache["joint"])
        for head, dout in (("a", dlogits), ("v", dvalue[:, None])):
            l1, r1, l2, r2, l3 = cache[head]
            d, dw, db = linear_backward(dout.astype(djoint.dtype), l3)
            grads[f"{head}w3"] = dw
            grads[f"{head}b3"] = db
            d = relu_backward(d, r2)
            d, dw, db = linear_backward(d, l2)
            grads[f"{head}w2"] = dw
            grads[f"{head}b2"] = db
            d = relu_backward(d, r1)
            d, dw, db = linear_backward(d, l1)
            grads[f"{head}w1"] = dw
            grads[f"{head}b1"] = db
            djoint += d
        fc_dim = cfg.fc_dim
        df = djoint[:, :fc_dim]
        lc, r = cache["fc"]
        df = relu_backward(df, r)
        dflat, dw, db = linear_backward(df, lc)
        grads["fcw"] = dw
        grads["fcb"] = db
        d = dflat.reshape(cache["flat_shape"])
        for i in range(len(cfg.conv), 0, -1):
            cv, r = cache[f"conv{i}"]
            d = relu_backward(d, r)
            d, dw, db = conv2d_backward(d, cv)
            grads[f"c{i}w"] = dw
            grads[f"c{i}b"] = db
        return grads


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# -- checkpoints --------------------------------------------------------------

_MAGIC = b"RSK1"
_DTYPE_CODES = {"float32": 0, "float64": 1, "int64": 2}
_CODES_DTYPE = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(path: str, params: dict[str, np.ndarray], meta: dict,
                    opt: Adam | None = None) -> None:
    """Little-endian binary: magic, version, json meta, then named arrays
    (dtype code, shape, raw row-major bytes). Optimizer state rides along
    under 'adam.*' names so training can resume exactly."""
    arrays = dict(params)
    if opt is not None:
        meta = dict(meta)
        meta["adam"] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                        "eps": opt.eps, "t": opt.t}
        for k, v in opt.m.items():
            arrays[f"adam.m.{k}"] = v
        for k, v in opt.v.items():
            arrays[f"adam.v.{k}"] = v
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", 1)
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(meta_b))
    blob += meta_b
    blob += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if str(arr.dtype) not in _DTYPE_CODES:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<BB", _DTYPE_CODES[str(arr.dtype)], arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += arr.astype(arr.dtype, copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise ValueError("not a roomseek checkpoint")
    pos = 4
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos:pos + mlen].decode("utf-8"))
    pos += mlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dt = np.dtype(_CODES_DTYPE[code])
        nbytes = int(np.prod(shape)) * dt.itemsize if ndim else dt.itemsize
        arr = np.frombuffer(data[pos:pos + nbytes], dtype=dt).reshape(shape)
        pos += nbytes
        arrays[name] = arr.copy()
    return arrays, meta


def restore_model(path: str) -> tuple["ActorCritic", dict, Adam | None]:
    """Rebuild a model (and optimizer when present) from a checkpoint."""
    arrays, meta = load_checkpoint(path)
    cfg = NetConfig(**{k: (tuple(tuple(c) for c in v) if k == "conv" else v)
                       for k, v in meta["net"].items()})
    model = ActorCritic(cfg, seed=0)
    for k in model.params:
        model.params[k] = arrays[k].astype(cfg.np_dtype)
    opt = None
    if "adam" in meta:
        a = meta["adam"]
        opt = Adam(model.params, lr=a["lr"], beta1=a["beta1"],
                   beta2=a["beta2"], eps=a["eps"])
        opt.t = a["t"]
        for k in model.params:
            opt.m[k] = arrays[f"adam.m.{k}"].astype(cfg.np_dtype)
            opt.v[k] = arrays[f"adam.v.{k}"].astype(cfg.np_dtype)
    return model, meta, opt


def net_meta(cfg: NetConfig) -> dict:
    return {"net": asdict(cfg)}
