"""Small affine/ReLU classifiers with exact input gradients.

Every contraction goes through ``np.einsum`` (no BLAS dispatch) so that a row's
logits and gradients are bitwise independent of the other rows in the batch.
The attack relies on that for its per-sample independence guarantee.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

# head(logits (n, Y)) -> (values (n,), d values / d logits (n, Y))
ScalarHead = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class Model:
    """Affine + ReLU chain; the last layer is linear and emits logits.

    ``weights[i]`` has shape ``(out, in)``. Instances are treated as immutable.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise ValueError("need one bias per weight matrix and at least one layer")
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise ValueError(f"layer {i} expects {w.shape[1]} inputs, got {ws[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    def same_parameters(self, other: "Model") -> bool:
        return len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b)
            for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


def linear_model(W, b=None) -> Model:
    W = np.asarray(W, dtype=np.float64)
    if b is None:
        b = np.zeros(W.shape[0])
    return Model((W,), (np.asarray(b, dtype=np.float64),))


def init_model(layer_sizes, seed: int) -> Model:
    """He-initialised MLP for ``layer_sizes = (d, h1, ..., Y)``."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid architecture {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Model(tuple(weights), tuple(biases), {"init_seed": seed})


def _as_batch(model: Model, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"input has shape {x.shape}, model expects dimension {model.input_dim}")
    return X, single


def _affine(X, W, b):
    return np.einsum("ik,jk->ij", X, W) + b


def _forward_cache(model: Model, X: np.ndarray) -> list[np.ndarray]:
    """Pre-activations of every layer (the last one is the logits)."""
    pre = []
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = _affine(h, W, b)
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return pre


def forward(model: Model, x) -> np.ndarray:
    """Logits for a single input ``(d,)`` or a batch ``(n, d)``."""
    X, single = _as_batch(model, x)
    z = _forward_cache(model, X)[-1]
    return z[0] if single else z


def predict(model: Model, x) -> np.ndarray:
    # np.argmax breaks ties toward the lowest index
    return np.argmax(forward(model, x), axis=-1)


def _backward_input(model: Model, pre: list[np.ndarray], grad_logits: np.ndarray) -> np.ndarray:
    g = grad_logits
    for i in range(len(model.weights) - 1, -1, -1):
        if i < len(model.weights) - 1:
            g = g * (pre[i] > 0.0)  # ReLU subgradient 0 at the kink
        g = np.einsum("ij,jk->ik", g, model.weights[i])
    return g


def input_gradient(model: Model, x, head: ScalarHead) -> np.ndarray:
    """Exact reverse-mode gradient of ``head(forward(model, x))`` w.r.t. ``x``.

    For a batch, row ``i`` is the gradient of the ``i``-th head value with
    respect to the ``i``-th input.
    """
    X, single = _as_batch(model, x)
    pre = _forward_cache(model, X)
    _, dz = head(pre[-1])
    g = _backward_input(model, pre, np.asarray(dz, dtype=np.float64).reshape(pre[-1].shape))
    return g[0] if single else g


def value_and_input_gradient(model: Model, x, head: ScalarHead):
    """Logits, head values and input gradients from one forward/backward pass."""
    X, single = _as_batch(model, x)
    pre = _forward_cache(model, X)
    values, dz = head(pre[-1])
    g = _backward_input(model, pre, np.asarray(dz, dtype=np.float64).reshape(pre[-1].shape))
    if single:
        return pre[-1][0], np.asarray(values).reshape(-1)[0], g[0]
    return pre[-1], np.asarray(values), g


def finite_diff_gradient(model: Model, x, head: ScalarHead, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of the head value, one coordinate at a time.

    No clipping to the unit box is applied to the probe points.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    X, single = _as_batch(model, x)
    n, d = X.shape
    grad = np.empty_like(X)
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        hi = np.asarray(head(forward(model, X + e))[0], dtype=np.float64)
        lo = np.asarray(head(forward(model, X - e))[0], dtype=np.float64)
        grad[:, i] = (hi - lo) / (2 * step)
    return grad[0] if single else grad


# --------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y)
        if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
            raise ValueError(f"inconsistent dataset shapes X{X.shape} y{y.shape}")
        if len(X) and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("inputs must lie in [0, 1]")
        if len(y) and (np.any(y != np.round(y)) or y.min() < 0):
            raise ValueError("labels must be non-negative integers")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))

    def __len__(self):
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, X=ds.X, y=ds.y)
        return
    header = ",".join([f"x_{i}" for i in range(ds.dim)] + ["label"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row, label in zip(ds.X, ds.y):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return Dataset(data["X"], data["y"])
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    header = lines[0].strip().split(",")
    if header[-1] != "label" or header[:-1] != [f"x_{i}" for i in range(len(header) - 1)]:
        raise ValueError(f"{path}: expected header x_0..x_(d-1),label")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    rows = rows.reshape(-1, len(header))
    return Dataset(rows[:, :-1], rows[:, -1].astype(np.int64))


def make_blobs(n: int, seed: int, separation: float = 0.5, spread: float = 0.06) -> Dataset:
    """Two linearly separable Gaussian blobs in the unit square."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    centers = np.array([[0.5 - separation / 2, 0.5], [0.5 + separation / 2, 0.5]])
    X = np.clip(centers[y] + rng.normal(0.0, spread, size=(n, 2)), 0.0, 1.0)
    return Dataset(X, y)


def make_rings(n: int, seed: int, radii=(0.1, 0.25, 0.4), noise: float = 0.015) -> Dataset:
    """Concentric noisy rings around the centre of the unit square, one class per ring."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % len(radii)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    r = np.asarray(radii)[y] + rng.normal(0.0, noise, size=n)
    X = 0.5 + r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return Dataset(np.clip(X, 0.0, 1.0), y)


def make_mixed_features(n: int, seed: int, d: int = 20, robust_sep: float = 0.5,
                        robust_noise: float = 0.12, weak_sep: float = 0.06,
                        weak_noise: float = 0.05) -> Dataset:
    """Two classes: one well-separated but noisy coordinate plus ``d - 1`` weak ones.

    The weak coordinates are jointly very predictive yet each moves the class
    mean by only ``weak_sep``, so a standard classifier that leans on them is
    easy to flip with a small l-inf perturbation. Adversarial training pushes
    the model towards the first coordinate.
    """
    if d < 2:
        raise ValueError("need d >= 2")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    s = 2.0 * y - 1.0
    X = np.empty((n, d))
    X[:, 0] = 0.5 + s * robust_sep / 2 + rng.normal(0.0, robust_noise, n)
    X[:, 1:] = 0.5 + s[:, None] * weak_sep / 2 + rng.normal(0.0, weak_noise, (n, d - 1))
    return Dataset(np.clip(X, 0.0, 1.0), y)


# --------------------------------------------------------------------------
# training


def _ce_head_grad(logits: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy (the positive, ascending one) and its logit gradient."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    onehot = np.zeros_like(logits)
    onehot[np.arange(len(y)), y] = 1.0
    return -logp[np.arange(len(y)), y], np.exp(logp) - onehot


def _param_gradients(model: Model, X, y):
    pre = _forward_cache(model, X)
    loss, g = _ce_head_grad(pre[-1], y)
    g = g / len(y)
    gw, gb = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        if i < len(model.weights) - 1:
            g = g * (pre[i] > 0.0)
        h_in = X if i == 0 else np.maximum(pre[i - 1], 0.0)
        gw.append(g.T @ h_in)
        gb.append(g.sum(axis=0))
        g = g @ model.weights[i]
    return loss.mean(), gw[::-1], gb[::-1]


def _pgd_linf(model: Model, X, y, eps: float, steps: int) -> np.ndarray:
    delta = np.zeros_like(X)
    if eps == 0:
        return delta
    alpha = 2.5 * eps / steps
    for _ in range(steps):
        grad = input_gradient(model, X + delta, lambda z: _ce_head_grad(z, y))
        delta = np.clip(delta + alpha * np.sign(grad), -eps, eps)
        delta = np.clip(X + delta, 0.0, 1.0) - X
    return delta


def accuracy(model: Model, ds: Dataset) -> float:
    return float(np.mean(predict(model, ds.X) == ds.y))


def _train(ds, layer_sizes, epochs, lr, seed, batch_size, eps_train, pgd_steps):
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    if epochs < 1 or not lr > 0:
        raise ValueError(f"need epochs >= 1 and lr > 0 (got {epochs}, {lr})")
    if eps_train < 0 or pgd_steps < 1:
        raise ValueError(f"need eps_train >= 0 and pgd_steps >= 1 (got {eps_train}, {pgd_steps})")
    sizes = tuple(layer_sizes)
    if sizes[0] != ds.dim:
        raise ValueError(f"architecture input {sizes[0]} != data dimension {ds.dim}")
    rng = np.random.default_rng(seed)
    model = init_model(sizes, int(rng.integers(2**31)))
    ws = [w.copy() for w in model.weights]
    bs = [b.copy() for b in model.biases]
    for _ in range(epochs):
        order = rng.permutation(len(ds))
        for start in range(0, len(ds), batch_size):
            idx = order[start:start + batch_size]
            current = Model(tuple(ws), tuple(bs))
            Xb = ds.X[idx]
            Xb = Xb + _pgd_linf(current, Xb, ds.y[idx], eps_train, pgd_steps)
            _, gw, gb = _param_gradients(current, Xb, ds.y[idx])
            for i in range(len(ws)):
                ws[i] -= lr * gw[i]
                bs[i] -= lr * gb[i]
    trained = Model(tuple(ws), tuple(bs))
    provenance = {
        "seed": seed,
        "trainer": "adversarial" if eps_train > 0 else "standard",
        "epochs": epochs,
        "lr": lr,
        "batch_size": batch_size,
        "eps_train": eps_train,
        "pgd_steps": pgd_steps,
        "train_accuracy": accuracy(trained, ds),
    }
    return Model(trained.weights, trained.biases, provenance)


def train_standard(ds: Dataset, layer_sizes, epochs: int, lr: float, seed: int,
                   batch_size: int = 32) -> Model:
    """Mini-batch gradient descent on mean cross-entropy.

    The final training accuracy is stored in ``model.provenance``.
    """
    return _train(ds, layer_sizes, epochs, lr, seed, batch_size, 0.0, 1)


def train_adversarial(ds: Dataset, layer_sizes, epochs: int, lr: float, eps_train: float,
                      pgd_steps: int, seed: int, batch_size: int = 32) -> Model:
    """Madry-style training: each mini-batch is replaced by its l-inf PGD counterpart."""
    return _train(ds, layer_sizes, epochs, lr, seed, batch_size, eps_train, pgd_steps)


# --------------------------------------------------------------------------
# serialization


def model_to_dict(model: Model) -> dict:
    return {
        "architecture": {"layer_sizes": list(model.layer_sizes), "hidden_activation": "relu",
                         "output_activation": "identity"},
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "class_count": model.num_classes,
        "seed_provenance": model.provenance,
    }


def model_from_dict(doc: dict) -> Model:
    model = Model(tuple(np.array(w, dtype=np.float64).reshape(len(w), -1) for w in doc["weights"]),
                  tuple(np.array(b, dtype=np.float64) for b in doc["biases"]),
                  dict(doc.get("seed_provenance", {})))
    if model.num_classes != doc["class_count"]:
        raise ValueError("class_count does not match the final layer width")
    sizes = doc.get("architecture", {}).get("layer_sizes")
    if sizes is not None and tuple(sizes) != model.layer_sizes:
        raise ValueError(f"architecture {sizes} does not match weights {model.layer_sizes}")
    return model


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))
