"""Quantization-aware training.

Two flows:

  STE -- float master weights; every batch runs forward on the quantized
         copy, the gradient passes straight through the quantizer to the
         master, SGD updates the master, and the master is requantized.

  ALR -- no master copy; the quantized weights themselves are trained.
         Gradients treat them as ordinary floats, and each weight's step is
         scaled by the gap between its quantization level and the next one,
         so weights far from zero move proportionally faster.

Only weight tensors are quantized; biases stay float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import SgdConfig, SgdState
from .data import Dataset
from .models import Model
from .quantizers import (
    FloatScheme,
    PotScheme,
    PruneConfig,
    QuantizedLayer,
    Scheme,
    dequantize,
    quantize,
)

__all__ = [
    "QatConfig",
    "QatState",
    "MetricsRow",
    "TrainingError",
    "QatStateError",
    "alr_scale",
    "ste_epoch",
    "alr_epoch",
    "train",
    "train_float",
    "evaluate",
    "batch_indices",
]


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


class QatStateError(RuntimeError):
    """QAT state used before it was initialized."""


@dataclass(frozen=True)
class QatConfig:
    method: str  # "ste" | "alr"
    schemes: dict[str, Scheme]
    prune: PruneConfig = PruneConfig(0.0)
    sgd: SgdConfig = SgdConfig()
    batch_size: int = 32
    quantize_first_layer: bool = True
    quantize_last_layer: bool = True

    def __post_init__(self) -> None:
        if self.method not in ("ste", "alr"):
            raise ValueError(f"method must be 'ste' or 'alr', got {self.method!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def scheme_for(self, name: str, first: str, last: str) -> Scheme:
        """Effective scheme after the first/last-layer opt-outs."""
        if name == first and not self.quantize_first_layer:
            return FloatScheme()
        if name == last and not self.quantize_last_layer:
            return FloatScheme()
        return self.schemes[name]


@dataclass
class QatState:
    masters: dict[str, np.ndarray] = field(default_factory=dict)  # STE only
    quantized: dict[str, QuantizedLayer | None] = field(default_factory=dict)
    epoch: int = 0
    history: list["MetricsRow"] = field(default_factory=list)
    sgd_state: SgdState = field(default_factory=SgdState)
    rng: np.random.Generator | None = None


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    lr: float
    zero_fraction: float

    HEADER = "epoch,split,loss,accuracy,lr,zero_fraction"

    def csv(self) -> str:
        return (
            f"{self.epoch},{self.split},{self.loss:.6f},{self.accuracy:.6f},"
            f"{self.lr:.8f},{self.zero_fraction:.6f}"
        )


def alr_scale(code: int, bits: int) -> float:
    """Per-weight learning-rate multiplier for power-of-two levels.

    The gap between adjacent levels at exponent e is 2^(e-1), so relative
    to the minimum level the gap doubles per level toward the maximum:
    scale = 2^(max_code - code), anchored at 1.0 for the minimum level.
    """
    max_code = 2 ** (bits - 1) - 1
    if not 0 <= code <= max_code:
        raise ValueError(f"code {code} out of range [0, {max_code}]")
    return float(2.0 ** (max_code - code))


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _resolved_schemes(config: QatConfig, model: Model) -> dict[str, Scheme]:
    names = [l.name for l in model.trainable()]
    missing = [n for n in names if n not in config.schemes]
    if missing:
        raise ValueError(f"no quantization scheme for layer(s): {', '.join(missing)}")
    return {n: config.scheme_for(n, names[0], names[-1]) for n in names}


def _quantize_all(
    weights: dict[str, np.ndarray], schemes: dict[str, Scheme], prune: PruneConfig
) -> dict[str, QuantizedLayer | None]:
    out: dict[str, QuantizedLayer | None] = {}
    for name, w in weights.items():
        scheme = schemes[name]
        out[name] = None if isinstance(scheme, FloatScheme) else quantize(w, scheme, prune)
    return out


def _install(model: Model, masters: dict[str, np.ndarray],
             quantized: dict[str, QuantizedLayer | None]) -> None:
    for layer in model.trainable():
        q = quantized[layer.name]
        layer.w.data = masters[layer.name].copy() if q is None else dequantize(q)


def zero_fraction_of(quantized: dict[str, QuantizedLayer | None]) -> float:
    total = 0
    masked = 0
    for q in quantized.values():
        if q is None:
            continue
        total += q.n_weights
        masked += int(q.zero_mask.sum())
    return masked / total if total else 0.0


def _train_batch(model: Model, xb: np.ndarray, yb: np.ndarray) -> tuple[float, int]:
    model.zero_grads()
    logits = model.forward(xb)
    loss = ag.cross_entropy(logits, yb)
    ag.backward(loss)
    correct = int((logits.data.argmax(axis=1) == yb).sum())
    return loss.data.item(), correct


def ste_epoch(state: QatState, model: Model, data: Dataset, config: QatConfig) -> QatState:
    """One straight-through epoch: quantized forward, float master update."""
    if not state.masters:
        raise QatStateError("STE needs master weights; initialize via train()")
    schemes = _resolved_schemes(config, model)
    layers = model.trainable()
    params = [l.w for l in layers] + [l.b for l in layers]

    loss_sum, correct = 0.0, 0
    for idx in batch_indices(len(data), config.batch_size, state.rng):
        state.quantized = _quantize_all(state.masters, schemes, config.prune)
        _install(model, state.masters, state.quantized)
        loss, ok = _train_batch(model, data.images[idx], data.labels[idx])
        loss_sum += loss * len(idx)
        correct += ok
        # straight-through: the gradient of the quantized copy is applied
        # to the master, which the next quantization starts from
        for layer in layers:
            layer.w.data = state.masters[layer.name]
        ag.sgd_step(params, config.sgd, state.epoch, state.sgd_state)
        for layer in layers:
            state.masters[layer.name] = layer.w.data

    state.quantized = _quantize_all(state.masters, schemes, config.prune)
    _install(model, state.masters, state.quantized)
    _record_epoch(state, config, loss_sum / len(data), correct / len(data))
    return state


def alr_epoch(state: QatState, model: Model, data: Dataset, config: QatConfig) -> QatState:
    """One adaptive-learning-rate epoch: quantized weights trained in place."""
    schemes = _resolved_schemes(config, model)
    layers = model.trainable()
    params = [l.w for l in layers] + [l.b for l in layers]

    if not state.quantized:
        weights = {l.name: l.w.data for l in layers}
        state.quantized = _quantize_all(weights, schemes, config.prune)
        _install(model, weights, state.quantized)

    loss_sum, correct = 0.0, 0
    for idx in batch_indices(len(data), config.batch_size, state.rng):
        loss, ok = _train_batch(model, data.images[idx], data.labels[idx])
        loss_sum += loss * len(idx)
        correct += ok
        scales = [_alr_scales_for(state.quantized[l.name]) for l in layers]
        scales += [None] * len(layers)  # biases step at the base rate
        ag.sgd_step(params, config.sgd, state.epoch, state.sgd_state, lr_scales=scales)
        weights = {l.name: l.w.data for l in layers}
        state.quantized = _quantize_all(weights, schemes, config.prune)
        _install(model, weights, state.quantized)

    _record_epoch(state, config, loss_sum / len(data), correct / len(data))
    return state


def _alr_scales_for(q: QuantizedLayer | None) -> np.ndarray | None:
    if q is None or not isinstance(q.scheme, PotScheme):
        return None  # equidistant levels (or float): no compensation needed
    scales = 2.0 ** (q.scheme.max_code - q.codes.astype(np.float64))
    scales[q.zero_mask] = 1.0  # zeroed weights step at the minimum-gap rate
    return scales.reshape(q.shape).astype(np.float32)


def _record_epoch(state: QatState, config: QatConfig, loss: float, acc: float) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"loss diverged at epoch {state.epoch}")
    state.history.append(
        MetricsRow(state.epoch, "train", loss, acc,
                   config.sgd.lr_at(state.epoch), zero_fraction_of(state.quantized))
    )
    state.epoch += 1


def train(
    config: QatConfig,
    model: Model,
    train_data: Dataset,
    val_data: Dataset | None = None,
) -> tuple[Model, QatState]:
    """Run the configured QAT flow for config.sgd.epochs epochs.

    The model is expected to hold pretrained float weights; with zero
    epochs it is returned unchanged (quantize at pack time for a
    training-free snapshot).
    """
    schemes = _resolved_schemes(config, model)
    state = QatState(rng=np.random.default_rng(config.sgd.seed))
    if config.method == "ste":
        state.masters = {l.name: l.w.data.copy() for l in model.trainable()}
    step = ste_epoch if config.method == "ste" else alr_epoch

    for _ in range(config.sgd.epochs):
        step(state, model, train_data, config)
        if val_data is not None:
            acc = evaluate(model, val_data)
            last = state.history[-1]
            state.history.append(
                MetricsRow(last.epoch, "val", float("nan"), acc, last.lr, last.zero_fraction)
            )
    if not state.quantized:
        weights = {l.name: l.w.data for l in model.trainable()}
        state.quantized = _quantize_all(weights, schemes, config.prune)
    return model, state


def train_float(
    sgd: SgdConfig,
    model: Model,
    train_data: Dataset,
    val_data: Dataset | None = None,
    batch_size: int = 32,
    weight_decay: float = 0.0,
) -> tuple[Model, list[MetricsRow]]:
    """Plain float32 training; produces the baseline QAT starts from.

    Weight decay applies to weight tensors only (not biases); decaying
    unused weights toward zero gives the bell-shaped magnitude profile the
    log-domain quantizer is built for.
    """
    rng = np.random.default_rng(sgd.seed)
    params = model.params()
    weights = [l.w for l in model.trainable()]
    sgd_state = SgdState()
    history: list[MetricsRow] = []
    for epoch in range(sgd.epochs):
        loss_sum, correct = 0.0, 0
        for idx in batch_indices(len(train_data), batch_size, rng):
            loss, ok = _train_batch(model, train_data.images[idx], train_data.labels[idx])
            loss_sum += loss * len(idx)
            correct += ok
            if weight_decay:
                for w in weights:
                    w.grad += np.float32(weight_decay) * w.data
            ag.sgd_step(params, sgd, epoch, sgd_state)
        loss = loss_sum / len(train_data)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        history.append(MetricsRow(epoch, "train", loss, correct / len(train_data),
                                  sgd.lr_at(epoch), 0.0))
        if val_data is not None:
            history.append(MetricsRow(epoch, "val", float("nan"),
                                      evaluate(model, val_data), sgd.lr_at(epoch), 0.0))
    return model, history


def evaluate(model: Model, data: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy with the model's current (float-path) weights."""
    correct = 0
    for start in range(0, len(data), batch_size):
        xb = data.images[start : start + batch_size]
        yb = data.labels[start : start + batch_size]
        logits = model.forward(xb)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return correct / len(data)
