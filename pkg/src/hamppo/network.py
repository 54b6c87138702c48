"""Actor-critic MLP with explicit reverse-mode gradients.

Two independent ReLU towers (policy and value) of the same widths. The policy
tower feeds a 2-logit type head and a 6-logit low-level head; the value tower
feeds a scalar head. Parameters live in a flat ``dict`` of numpy arrays so
they can be checkpointed, compared and perturbed directly.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

DEFAULT_HIDDEN = (256, 128, 128, 64)
N_TYPE = 2
N_LOW = 6
CHECKPOINT_VERSION = 1


class ArchitectureError(ValueError):
    pass


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def init_params(input_dim: int, hidden=DEFAULT_HIDDEN, seed=0, dtype=np.float32) -> dict:
    """Orthogonal init: gain sqrt(2) for hidden layers, 0.01 for policy heads, 1 for value."""
    rng = np.random.default_rng(seed)
    params = {}
    for tower in ("pi", "vf"):
        n_in = input_dim
        for k, n_out in enumerate(hidden):
            params[f"{tower}.{k}.W"] = _orthogonal(rng, n_in, n_out, np.sqrt(2.0))
            params[f"{tower}.{k}.b"] = np.zeros(n_out)
            n_in = n_out
    last = hidden[-1] if hidden else input_dim
    params["type.W"] = _orthogonal(rng, last, N_TYPE, 0.01)
    params["type.b"] = np.zeros(N_TYPE)
    params["low.W"] = _orthogonal(rng, last, N_LOW, 0.01)
    params["low.b"] = np.zeros(N_LOW)
    params["value.W"] = _orthogonal(rng, last, 1, 1.0)
    params["value.b"] = np.zeros(1)
    return {k: v.astype(dtype) for k, v in params.items()}


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def architecture(params: dict) -> dict:
    hidden = []
    k = 0
    while f"pi.{k}.W" in params:
        hidden.append(params[f"pi.{k}.W"].shape[1])
        k += 1
    input_dim = params["pi.0.W"].shape[0] if hidden else params["type.W"].shape[0]
    return {"input_dim": int(input_dim), "hidden": [int(h) for h in hidden],
            "dtype": str(params["type.W"].dtype)}


def _n_layers(params: dict) -> int:
    k = 0
    while f"pi.{k}.W" in params:
        k += 1
    return k


def forward(params: dict, x: np.ndarray, cache: bool = False):
    """Return ``(type_logits, low_logits, value)`` for a batch (or single row) ``x``."""
    x = np.asarray(x)
    single = x.ndim == 1
    if single:
        x = x[None]
    arch_in = params["pi.0.W"].shape[0] if "pi.0.W" in params else params["type.W"].shape[0]
    if x.shape[-1] != arch_in:
        raise ArchitectureError(f"encoding has {x.shape[-1]} features, network expects {arch_in}")
    x = x.astype(params["type.W"].dtype, copy=False)
    n = _n_layers(params)
    acts = {}
    for tower in ("pi", "vf"):
        h = x
        hs = [h]
        for k in range(n):
            h = np.maximum(h @ params[f"{tower}.{k}.W"] + params[f"{tower}.{k}.b"], 0.0)
            hs.append(h)
        acts[tower] = hs
    top_pi = acts["pi"][-1]
    top_vf = acts["vf"][-1]
    type_logits = top_pi @ params["type.W"] + params["type.b"]
    low_logits = top_pi @ params["low.W"] + params["low.b"]
    value = (top_vf @ params["value.W"] + params["value.b"])[:, 0]
    if single:
        out = (type_logits[0], low_logits[0], value[0])
    else:
        out = (type_logits, low_logits, value)
    if cache:
        return out, acts
    return out


def backward(params: dict, acts: dict, d_type, d_low, d_value) -> dict:
    """Gradients of a scalar loss given its gradients w.r.t. the three outputs."""
    dt = params["type.W"].dtype
    d_type = np.asarray(d_type, dtype=dt)
    d_low = np.asarray(d_low, dtype=dt)
    d_value = np.asarray(d_value, dtype=dt)[:, None]
    grads = {}
    n = _n_layers(params)
    top_pi = acts["pi"][-1]
    top_vf = acts["vf"][-1]
    grads["type.W"] = top_pi.T @ d_type
    grads["type.b"] = d_type.sum(axis=0)
    grads["low.W"] = top_pi.T @ d_low
    grads["low.b"] = d_low.sum(axis=0)
    grads["value.W"] = top_vf.T @ d_value
    grads["value.b"] = d_value.sum(axis=0)
    upstream = {
        "pi": d_type @ params["type.W"].T + d_low @ params["low.W"].T,
        "vf": d_value @ params["value.W"].T,
    }
    for tower in ("pi", "vf"):
        g = upstream[tower]
        hs = acts[tower]
        for k in range(n - 1, -1, -1):
            g = g * (hs[k + 1] > 0)
            grads[f"{tower}.{k}.W"] = hs[k].T @ g
            grads[f"{tower}.{k}.b"] = g.sum(axis=0)
            if k > 0:
                g = g @ params[f"{tower}.{k}.W"].T
    return {k: grads[k] for k in params}


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Adam:
    def __init__(self, params: dict, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        step = self.lr * np.sqrt(corr2) / corr1
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            params[k] -= (step * m / (np.sqrt(v) + self.eps * np.sqrt(corr2))).astype(params[k].dtype)

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: dict, optimizer: Optional[Adam] = None, rng_state=None,
                    extra: Optional[dict] = None) -> Path:
    """Write an ``.npz`` container: parameters, optimizer moments and JSON metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"version": CHECKPOINT_VERSION, "architecture": architecture(params),
            "param_names": list(params), "rng_state": rng_state, "extra": extra or {}}
    arrays = {f"param/{k}": v for k, v in params.items()}
    if optimizer is not None:
        st = optimizer.state_dict()
        meta["optimizer"] = {k: st[k] for k in ("t", "lr", "beta1", "beta2", "eps")}
        arrays.update({f"adam_m/{k}": v for k, v in st["m"].items()})
        arrays.update({f"adam_v/{k}": v for k, v in st["v"].items()})
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> dict:
    """Return ``{"params", "optimizer" (state dict or None), "rng_state", "extra", "architecture"}``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ArchitectureError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: data[f"param/{k}"].copy() for k in meta["param_names"]}
        opt = None
        if "optimizer" in meta:
            opt = dict(meta["optimizer"])
            opt["m"] = {k: data[f"adam_m/{k}"].copy() for k in meta["param_names"]}
            opt["v"] = {k: data[f"adam_v/{k}"].copy() for k in meta["param_names"]}
    return {"params": params, "optimizer": opt, "rng_state": meta.get("rng_state"),
            "extra": meta.get("extra", {}), "architecture": meta["architecture"]}
