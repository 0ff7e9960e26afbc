"""Small feed-forward classifier with hand-derived reverse-mode gradients.

Architecture: affine -> relu chains with an identity output layer
producing K logits. Everything is float64 numpy and deterministic under
a fixed seed. Losses:

  nll         mean cross-entropy of softmax(f/T) against the labels
  energy_reg  squared hinges pushing in-energies below margin_in and
              out-energies above margin_out (energies at T=1)
  total       nll + energy_weight * energy_reg
  oe          mean cross-entropy from the uniform distribution to the
              predictive softmax (outlier-exposure baseline)

Subgradient conventions: relu'(0) = 0 and the hinge derivative at its
own margin is 0, so gradients are deterministic everywhere.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError

CHECKPOINT_FORMAT = "energy-ood-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    """Layer widths [d_in, hidden..., K]; relu hidden, identity output."""

    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise InputError("layer_sizes needs at least [d_in, K]")
        if any(s < 1 for s in sizes):
            raise InputError(f"layer sizes must be positive, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class MlpModel:
    """Parameter container: weights[i] is (fan_out, fan_in), biases[i] is (fan_out,)."""

    config: MlpConfig
    weights: list
    biases: list

    def __post_init__(self):
        sizes = self.config.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise InputError("parameter count does not match config")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise InputError(f"layer {i} parameter shapes do not match config")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InputError(f"layer {i} has non-finite parameters")

    def copy(self) -> "MlpModel":
        return MlpModel(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class Gradients:
    """Same shape as the model parameters; supports the linear ops SGD needs."""

    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "Gradients":
        return cls(
            weights=[np.zeros_like(w) for w in model.weights],
            biases=[np.zeros_like(b) for b in model.biases],
        )

    def add_scaled(self, other: "Gradients", scale: float = 1.0) -> "Gradients":
        return Gradients(
            weights=[a + scale * b for a, b in zip(self.weights, other.weights)],
            biases=[a + scale * b for a, b in zip(self.biases, other.biases)],
        )


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for pretraining / energy-bounded fine-tuning."""

    energy_weight: float = 0.1
    margin_in: float = -23.0
    margin_out: float = -5.0
    base_lr: float = 0.001
    epochs: int = 10
    batch_in: int = 128
    batch_out: int = 256
    seed: int = 0
    temp: float = 1.0

    def __post_init__(self):
        if self.energy_weight < 0:
            raise InputError("energy_weight must be >= 0")
        if self.margin_in > self.margin_out:
            raise InputError(
                f"margin_in ({self.margin_in}) must be <= margin_out ({self.margin_out})"
            )
        if self.base_lr <= 0:
            raise InputError("base_lr must be positive")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.batch_in < 1 or self.batch_out < 1:
            raise InputError("batch sizes must be positive")
        if self.temp <= 0:
            raise InputError("temp must be positive")

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class Batch:
    """Input rows with optional class labels (absent for outlier batches)."""

    inputs: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InputError("batch inputs must be a non-empty 2-D array")
        if not np.all(np.isfinite(x)):
            raise InputError("batch inputs contain non-finite values")
        object.__setattr__(self, "inputs", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise InputError("labels length must match inputs")
            if np.any(y < 0):
                raise InputError("labels must be non-negative class indices")
            object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "Batch":
        labels = None if self.labels is None else self.labels[idx]
        return Batch(inputs=self.inputs[idx], labels=labels)


def init(config: MlpConfig, seed) -> MlpModel:
    """Uniform [-a, a] weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(int(seed))
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(config=config, weights=weights, biases=biases)


def _forward_cached(model: MlpModel, x_rows: np.ndarray):
    """Forward pass keeping the activations/pre-activations backprop needs."""
    acts = [x_rows]
    pre = []
    a = x_rows
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        if i < last:
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        else:
            logits = z
    return logits, acts, pre


def forward(model: MlpModel, x) -> np.ndarray:
    """Logits for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.config.d_in:
        raise InputError(f"input must be a vector of length {model.config.d_in}")
    return forward_batch(model, x[None, :])[0]


def forward_batch(model: MlpModel, x_rows) -> np.ndarray:
    """Logits for a batch of input rows; row order preserved."""
    x = np.asarray(x_rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.d_in:
        raise InputError(f"inputs must be (n, {model.config.d_in})")
    logits, _, _ = _forward_cached(model, x)
    return logits


def _backprop(model: MlpModel, acts, pre, logit_grads: np.ndarray) -> Gradients:
    """Push dL/dlogits back through the layers."""
    n_layers = len(model.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    delta = logit_grads
    for i in range(n_layers - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * (pre[i - 1] > 0.0)
    return Gradients(weights=gw, biases=gb)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return m[:, 0] + np.log(np.exp(z - m).sum(axis=1))


def _require_labels(batch: Batch, n_classes: int) -> np.ndarray:
    if batch.labels is None:
        raise InputError("this loss needs a labeled batch")
    if np.any(batch.labels >= n_classes):
        raise InputError(f"labels must be < {n_classes}")
    return batch.labels


def nll_loss(model: MlpModel, batch: Batch, temp: float = 1.0) -> float:
    """Mean negative log softmax probability of the true labels at T."""
    y = _require_labels(batch, model.config.n_classes)
    logits = forward_batch(model, batch.inputs)
    z = logits / temp
    log_probs = z - _logsumexp_rows(z)[:, None]
    return float(-log_probs[np.arange(len(batch)), y].mean())


def _batch_energies(model: MlpModel, batch: Batch) -> np.ndarray:
    """Free energies at T=1 for every row of a batch."""
    logits = forward_batch(model, batch.inputs)
    return -_logsumexp_rows(logits)


def energy_reg_loss(
    model: MlpModel, in_batch: Batch, out_batch: Batch, margin_in: float, margin_out: float
) -> float:
    """Squared hinge penalties on the energy band between the two margins."""
    e_in = _batch_energies(model, in_batch)
    e_out = _batch_energies(model, out_batch)
    in_term = np.maximum(0.0, e_in - margin_in) ** 2
    out_term = np.maximum(0.0, margin_out - e_out) ** 2
    return float(in_term.mean() + out_term.mean())


def total_loss(model: MlpModel, in_batch: Batch, out_batch: Batch, cfg: TrainConfig) -> float:
    """Cross-entropy plus energy_weight times the energy regularizer."""
    loss = nll_loss(model, in_batch, cfg.temp)
    if cfg.energy_weight != 0.0:
        loss += cfg.energy_weight * energy_reg_loss(
            model, in_batch, out_batch, cfg.margin_in, cfg.margin_out
        )
    return loss


def oe_loss(model: MlpModel, out_batch: Batch, temp: float = 1.0) -> float:
    """Mean cross-entropy from uniform to softmax(f/T).

    At T=1 this is logsumexp(f) minus the mean logit, per row.
    """
    logits = forward_batch(model, out_batch.inputs)
    z = logits / temp
    return float((_logsumexp_rows(z) - z.mean(axis=1)).mean())


def nll_grads(model: MlpModel, batch: Batch, temp: float = 1.0) -> Gradients:
    y = _require_labels(batch, model.config.n_classes)
    logits, acts, pre = _forward_cached(model, batch.inputs)
    p = _softmax_rows(logits / temp)
    g = p.copy()
    g[np.arange(len(batch)), y] -= 1.0
    g /= temp * len(batch)
    return _backprop(model, acts, pre, g)


def energy_reg_grads(
    model: MlpModel, in_batch: Batch, out_batch: Batch, margin_in: float, margin_out: float
) -> Gradients:
    # dE/dlogit = -softmax(logits) at T=1; hinge factor is 0 at the margin
    logits_in, acts_in, pre_in = _forward_cached(model, in_batch.inputs)
    e_in = -_logsumexp_rows(logits_in)
    coef_in = 2.0 * np.maximum(0.0, e_in - margin_in) / len(in_batch)
    g_in = -coef_in[:, None] * _softmax_rows(logits_in)
    grads = _backprop(model, acts_in, pre_in, g_in)

    logits_out, acts_out, pre_out = _forward_cached(model, out_batch.inputs)
    e_out = -_logsumexp_rows(logits_out)
    coef_out = 2.0 * np.maximum(0.0, margin_out - e_out) / len(out_batch)
    g_out = coef_out[:, None] * _softmax_rows(logits_out)
    return grads.add_scaled(_backprop(model, acts_out, pre_out, g_out))


def total_grads(model: MlpModel, in_batch: Batch, out_batch: Batch | None, cfg: TrainConfig) -> Gradients:
    grads = nll_grads(model, in_batch, cfg.temp)
    if cfg.energy_weight != 0.0:
        if out_batch is None:
            raise InputError("total loss with energy_weight > 0 needs an outlier batch")
        reg = energy_reg_grads(model, in_batch, out_batch, cfg.margin_in, cfg.margin_out)
        grads = grads.add_scaled(reg, cfg.energy_weight)
    return grads


def oe_grads(model: MlpModel, out_batch: Batch, temp: float = 1.0) -> Gradients:
    logits, acts, pre = _forward_cached(model, out_batch.inputs)
    k = model.config.n_classes
    g = (_softmax_rows(logits / temp) - 1.0 / k) / (temp * len(out_batch))
    return _backprop(model, acts, pre, g)


def label_energy_grads(model: MlpModel, x, label: int) -> Gradients:
    """Gradient of the per-label energy -f_label(x) for one input."""
    x = np.asarray(x, dtype=np.float64)[None, :]
    k = model.config.n_classes
    if not 0 <= label < k:
        raise IndexError(f"label {label} out of range for {k} classes")
    _, acts, pre = _forward_cached(model, x)
    g = np.zeros((1, k))
    g[0, label] = -1.0
    return _backprop(model, acts, pre, g)


@dataclass(frozen=True)
class LossSpec:
    """Which loss to differentiate, and on what."""

    kind: str  # nll | energy_reg | total | oe
    in_batch: Batch | None = None
    out_batch: Batch | None = None
    cfg: TrainConfig | None = None
    temp: float = 1.0
    margin_in: float | None = None
    margin_out: float | None = None


def backward(model: MlpModel, spec: LossSpec) -> Gradients:
    """Exact gradients of the specified loss w.r.t. every parameter."""
    if spec.kind == "nll":
        if spec.in_batch is None:
            raise InputError("nll backward needs in_batch")
        return nll_grads(model, spec.in_batch, spec.temp)
    if spec.kind == "energy_reg":
        if spec.in_batch is None or spec.out_batch is None:
            raise InputError("energy_reg backward needs in_batch and out_batch")
        if spec.margin_in is None or spec.margin_out is None:
            raise InputError("energy_reg backward needs both margins")
        return energy_reg_grads(model, spec.in_batch, spec.out_batch, spec.margin_in, spec.margin_out)
    if spec.kind == "total":
        if spec.in_batch is None or spec.cfg is None:
            raise InputError("total backward needs in_batch and cfg")
        return total_grads(model, spec.in_batch, spec.out_batch, spec.cfg)
    if spec.kind == "oe":
        if spec.out_batch is None:
            raise InputError("oe backward needs out_batch")
        return oe_grads(model, spec.out_batch, spec.temp)
    raise InputError(f"unknown loss kind {spec.kind!r}")


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine annealing from lr0 at step 0 to 0 at step == total_steps."""
    if total_steps < 1:
        raise InputError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise InputError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def margins_from_energies(in_energies, out_energies) -> tuple:
    """Margins from pretrained energy statistics: mean -/+ one std.

    If the raw values cross, margin_in is pulled down to margin_out so
    the band stays valid.
    """
    e_in = np.asarray(in_energies, dtype=np.float64)
    e_out = np.asarray(out_energies, dtype=np.float64)
    m_in = float(e_in.mean() - e_in.std())
    m_out = float(e_out.mean() + e_out.std())
    if m_in > m_out:
        m_in = m_out
    return m_in, m_out


def finetune(
    model: MlpModel,
    in_data: Batch,
    out_data: Batch | None,
    cfg: TrainConfig,
    log: list | None = None,
) -> MlpModel:
    """SGD with per-step cosine decay on the combined objective.

    Each step draws batch_in labeled in-distribution rows and (when the
    energy term is active) batch_out outlier rows, shuffled
    deterministically from cfg.seed. Raises NumericalError if the loss
    stops being finite. The input model is not modified.
    """
    _require_labels(in_data, model.config.n_classes)
    use_energy = cfg.energy_weight != 0.0
    if use_energy and (out_data is None or len(out_data) == 0):
        raise InputError("fine-tuning with energy_weight > 0 needs outlier data")

    trained = model.copy()
    if cfg.epochs == 0:
        return trained

    rng = np.random.default_rng(cfg.seed)
    n_in = len(in_data)
    batch_in = min(cfg.batch_in, n_in)
    steps_per_epoch = max(1, n_in // batch_in)
    total_steps = cfg.epochs * steps_per_epoch

    step = 0
    for epoch in range(cfg.epochs):
        perm_in = rng.permutation(n_in)
        perm_out = rng.permutation(len(out_data)) if use_energy else None
        for s in range(steps_per_epoch):
            batch = in_data.take(perm_in[s * batch_in : (s + 1) * batch_in])
            out_batch = None
            if use_energy:
                idx = np.take(
                    perm_out, np.arange(s * cfg.batch_out, (s + 1) * cfg.batch_out), mode="wrap"
                )
                out_batch = out_data.take(idx)

            # overflow on a diverging run is exactly what the guard below
            # reports, so numpy's own warnings are silenced for the step
            with np.errstate(over="ignore", invalid="ignore"):
                nll = nll_loss(trained, batch, cfg.temp)
                reg = (
                    energy_reg_loss(trained, batch, out_batch, cfg.margin_in, cfg.margin_out)
                    if use_energy
                    else 0.0
                )
                total = nll + cfg.energy_weight * reg
                if not math.isfinite(total):
                    raise NumericalError(f"training diverged at epoch {epoch} step {step}")

                lr = cosine_lr(step, total_steps, cfg.base_lr)
                grads = total_grads(trained, batch, out_batch, cfg)
                for w, gw in zip(trained.weights, grads.weights):
                    w -= lr * gw
                for b, gb in zip(trained.biases, grads.biases):
                    b -= lr * gb
            if not all(
                np.all(np.isfinite(arr)) for arr in (*trained.weights, *trained.biases)
            ):
                raise NumericalError(f"training diverged at epoch {epoch} step {step}")

            if log is not None:
                log.append(
                    {
                        "epoch": epoch,
                        "step": step,
                        "lr": lr,
                        "nll": nll,
                        "energy_reg": reg,
                        "total": total,
                    }
                )
            step += 1
    return trained


def pretrain(model: MlpModel, in_data: Batch, cfg: TrainConfig, log: list | None = None) -> MlpModel:
    """NLL-only training: finetune with the energy term switched off."""
    return finetune(model, in_data, None, dataclasses.replace(cfg, energy_weight=0.0), log=log)


def train_accuracy(model: MlpModel, data: Batch) -> float:
    """Fraction of rows whose argmax logit matches the label."""
    y = _require_labels(data, model.config.n_classes)
    logits = forward_batch(model, data.inputs)
    return float((logits.argmax(axis=1) == y).mean())


def save_checkpoint(path, model: MlpModel, train_config: TrainConfig | None = None) -> None:
    """Versioned JSON container; parameters as little-endian float64 base64."""
    layers = []
    for w, b in zip(model.weights, model.biases):
        layers.append(
            {
                "weights": base64.b64encode(w.astype("<f8").tobytes()).decode("ascii"),
                "biases": base64.b64encode(b.astype("<f8").tobytes()).decode("ascii"),
            }
        )
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(model.config.layer_sizes),
        "train_config": None if train_config is None else train_config.to_json_dict(),
        "layers": layers,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (model, train_config-or-None)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{path}: not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    config = MlpConfig(tuple(doc["layer_sizes"]))
    sizes = config.layer_sizes
    weights, biases = [], []
    for i, layer in enumerate(doc["layers"]):
        w = np.frombuffer(base64.b64decode(layer["weights"]), dtype="<f8").astype(np.float64)
        b = np.frombuffer(base64.b64decode(layer["biases"]), dtype="<f8").astype(np.float64)
        weights.append(w.reshape(sizes[i + 1], sizes[i]))
        biases.append(b)
    model = MlpModel(config=config, weights=weights, biases=biases)
    cfg = doc.get("train_config")
    return model, None if cfg is None else TrainConfig.from_json_dict(cfg)
