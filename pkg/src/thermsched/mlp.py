"""Minimal fully-connected network for the migration-rating model.

Plain numpy implementation: ReLU hidden layers, linear 8-unit output, MSE
loss, Adam with an exponentially decaying learning rate, early stopping on a
validation split, and a self-describing binary model file that also freezes
the feature normalizers.  Inference uses einsum so results are bit-identical
regardless of batch size (BLAS matmul kernels are shape-dependent).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int = 21
    hidden: tuple = (64, 64, 64, 64)
    output_dim: int = 8

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or not self.hidden:
            raise ValueError("all dimensions must be >= 1")
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be >= 1")

    @property
    def layer_dims(self):
        return [self.input_dim] + list(self.hidden) + [self.output_dim]


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    decay: float = 0.95          # lr = lr0 * decay**epoch
    batch_size: int = 64
    max_epochs: int = 500
    patience: int = 20           # epochs without val improvement
    val_split: float = 0.15
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.decay < 1:
            raise ValueError("decay must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class MlpModel:
    spec: ModelSpec
    weights: list                # per layer, (fan_in, fan_out)
    biases: list                 # per layer, (fan_out,)
    normalizers: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def init_model(spec: ModelSpec, seed=0, normalizers=None) -> MlpModel:
    """He-style initialization from a seeded generator; zero biases."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for i in range(len(dims) - 1):
        scale = np.sqrt(2.0 / dims[i])
        weights.append(rng.standard_normal((dims[i], dims[i + 1])) * scale)
        biases.append(np.zeros(dims[i + 1]))
    return MlpModel(spec=spec, weights=weights, biases=biases,
                    normalizers=dict(normalizers or {}),
                    metadata={"seed": seed})


def _forward_train(model, x):
    """Fast training-path forward; returns (output, per-layer activations)."""
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def infer_batch(model: MlpModel, rows) -> np.ndarray:
    """Rating matrix (n x 8); bit-identical for any batching of the rows."""
    x = np.atleast_2d(np.asarray(rows, dtype=float))
    if x.shape[1] != model.spec.input_dim:
        raise ValueError(
            f"expected {model.spec.input_dim} features, got {x.shape[1]}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite feature input")
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = np.einsum("ij,jk->ik", h, w, optimize=False) + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def loss_and_grads(model, x, y):
    """MSE over all outputs plus gradients for every weight and bias."""
    pred, acts = _forward_train(model, x)
    diff = pred - y
    loss = float(np.mean(diff * diff))
    n = diff.size
    delta = 2.0 * diff / n
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, grads_w, grads_b


def mse(model, x, y):
    pred, _ = _forward_train(model, x)
    d = pred - y
    return float(np.mean(d * d))


def _split_validation(n, groups, val_split, rng):
    """Row indices (train, val); whole groups go to one side when provided."""
    if groups is not None:
        uniq = sorted(set(groups))
        order = list(uniq)
        rng.shuffle(order)
        groups = np.asarray(groups)
        val_rows = np.zeros(n, dtype=bool)
        target = val_split * n
        taken = 0
        for g in order:
            if taken >= target:
                break
            mask = groups == g
            val_rows |= mask
            taken += int(mask.sum())
        if val_rows.all() or not val_rows.any():
            groups = None   # degenerate grouping, fall through
        else:
            idx = np.arange(n)
            return idx[~val_rows], idx[val_rows]
    idx = rng.permutation(n)
    n_val = max(1, int(round(val_split * n)))
    return idx[n_val:], idx[:n_val]


def train(x, y, spec: ModelSpec, config: TrainConfig, groups=None,
          normalizers=None, min_rows=100):
    """Adam + early stopping; returns (best model, training-curve rows).

    Deterministic for a given seed: init, validation split, and per-epoch
    shuffles all come from one seeded generator.  Curve rows are
    (epoch, lr, train_mse, val_mse).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] < min_rows:
        raise ValueError(f"need >= {min_rows} rows, got {x.shape[0]}")
    rng = np.random.default_rng(config.seed)
    tr, va = _split_validation(x.shape[0], groups, config.val_split, rng)
    x_tr, y_tr, x_va, y_va = x[tr], y[tr], x[va], y[va]
    model = init_model(spec, seed=config.seed, normalizers=normalizers)
    m_state = [np.zeros_like(p) for p in model.params()]
    v_state = [np.zeros_like(p) for p in model.params()]
    t_adam = 0
    best_val = np.inf
    best_snapshot = None
    best_epoch = 0
    since_best = 0
    curve = []
    for epoch in range(config.max_epochs):
        lr = config.lr0 * config.decay ** epoch
        order = rng.permutation(x_tr.shape[0])
        epoch_loss = 0.0
        n_batches = 0
        for s in range(0, x_tr.shape[0], config.batch_size):
            bi = order[s:s + config.batch_size]
            loss, gw, gb = loss_and_grads(model, x_tr[bi], y_tr[bi])
            if not np.isfinite(loss):
                raise RuntimeError(f"training diverged at epoch {epoch}")
            epoch_loss += loss
            n_batches += 1
            t_adam += 1
            params = model.params()
            grads = []
            for w, b in zip(gw, gb):
                grads.extend([w, b])
            c1 = 1.0 - config.beta1 ** t_adam
            c2 = 1.0 - config.beta2 ** t_adam
            for p, g, m, v in zip(params, grads, m_state, v_state):
                m *= config.beta1
                m += (1 - config.beta1) * g
                v *= config.beta2
                v += (1 - config.beta2) * (g * g)
                p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        val = mse(model, x_va, y_va)
        curve.append((epoch, lr, epoch_loss / max(n_batches, 1), val))
        if val < best_val - 1e-12:
            best_val = val
            best_epoch = epoch
            best_snapshot = ([w.copy() for w in model.weights],
                             [b.copy() for b in model.biases])
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    if best_snapshot is not None:
        model.weights, model.biases = best_snapshot
    model.metadata.update({
        "seed": config.seed,
        "final_epoch": len(curve) - 1,
        "best_epoch": best_epoch,
        "val_mse": best_val,
    })
    return model, curve


def grid_search(x, y, depths, widths, config: TrainConfig, groups=None,
                seeds=(0, 1, 2), normalizers=None, min_rows=100):
    """Train every (depth, width) with several seeds; rank by mean val MSE."""
    results = []
    for depth in depths:
        for width in widths:
            spec = ModelSpec(input_dim=x.shape[1], hidden=(width,) * depth,
                             output_dim=y.shape[1])
            vals = []
            for seed in seeds:
                cfg = TrainConfig(**{**config.__dict__, "seed": seed})
                model, _ = train(x, y, spec, cfg, groups=groups,
                                 normalizers=normalizers, min_rows=min_rows)
                vals.append(model.metadata["val_mse"])
            results.append({
                "depth": depth,
                "width": width,
                "mean_val_mse": float(np.mean(vals)),
                "val_mses": vals,
            })
    results.sort(key=lambda r: r["mean_val_mse"])
    return results


MAGIC = b"TSMLP1\n"


def save(model: MlpModel, path):
    """Self-describing binary: JSON header, then row-major float64 buffers."""
    header = {
        "input_dim": model.spec.input_dim,
        "hidden": list(model.spec.hidden),
        "output_dim": model.spec.output_dim,
        "normalizers": model.normalizers,
        "metadata": model.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(">I", len(blob)))
        fh.write(blob)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(b, dtype=np.float64).tobytes())


def load(path, expect_input_dim=None) -> MlpModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic)")
        (hlen,) = struct.unpack(">I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        spec = ModelSpec(input_dim=header["input_dim"],
                         hidden=tuple(header["hidden"]),
                         output_dim=header["output_dim"])
        if expect_input_dim is not None and spec.input_dim != expect_input_dim:
            raise ValueError(
                f"{path}: model takes {spec.input_dim} inputs, "
                f"expected {expect_input_dim}")
        dims = spec.layer_dims
        weights, biases = [], []
        for i in range(len(dims) - 1):
            n_w = dims[i] * dims[i + 1]
            raw = fh.read(n_w * 8)
            if len(raw) != n_w * 8:
                raise ValueError(f"{path}: truncated weight buffer (layer {i})")
            weights.append(np.frombuffer(raw, dtype=np.float64)
                           .reshape(dims[i], dims[i + 1]).copy())
            raw = fh.read(dims[i + 1] * 8)
            if len(raw) != dims[i + 1] * 8:
                raise ValueError(f"{path}: truncated bias buffer (layer {i})")
            biases.append(np.frombuffer(raw, dtype=np.float64).copy())
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after parameters")
    return MlpModel(spec=spec, weights=weights, biases=biases,
                    normalizers=header.get("normalizers", {}),
                    metadata=header.get("metadata", {}))
