"""Quantized model execution.

Two paths over a PackedModel:

  float   -- dequantized float32 weights, identical arithmetic to training
  integer -- signed 8-bit activations (max-abs calibrated per layer), weight
             codes decoded to integers, dot products emulated with fixed
             register widths, results rescaled back to float between layers

The integer path mirrors shift-based hardware: a power-of-two code c maps
to a left shift by (max_code - c) so the minimum level is integer 1, and
the residual scale 2^(-max_code) * SF rides along in the per-layer output
scale together with the activation scale (and any folded normalization
gain). Register overflow never passes silently: every value that leaves
the intermediate or accumulator range is counted and surfaced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import _im2col, _mm64
from .data import Dataset
from .packing import PackedLayerRecord, PackedModel
from .quantizers import (
    APOT_FIRST_EXPONENTS,
    APOT_SECOND_EXPONENTS,
    ApotScheme,
    PotScheme,
    QuantizedLayer,
    UniformScheme,
)
from .shift_mac import SATURATE, WRAP, MacConfig, MacEvents, emulation_config

__all__ = [
    "ActQuantParams",
    "CalibrationError",
    "calibrate",
    "integer_weights",
    "forward_float",
    "forward_integer",
    "evaluate_packed",
]


class CalibrationError(RuntimeError):
    """Integer path used without activation calibration."""


@dataclass(frozen=True)
class ActQuantParams:
    """Per-layer activation scales mapping floats to signed integers."""

    scales: dict[str, float]
    bits: int = 8

    @property
    def amax(self) -> int:
        return 2 ** (self.bits - 1) - 1


def calibrate(packed: PackedModel, images: np.ndarray, bits: int = 8) -> ActQuantParams:
    """Max-abs calibration of every trainable layer's input over one batch."""
    from .autograd import Tensor

    model = packed.to_model()
    scales: dict[str, float] = {}
    amax = 2 ** (bits - 1) - 1
    t = Tensor(images)
    for layer in model.layers:
        if layer.kind in ("conv", "linear"):
            m = float(np.max(np.abs(t.data)))
            scales[layer.name] = (m if m > 0 else 1.0) / amax
        t = layer(t)
    return ActQuantParams(scales, bits)


def integer_weights(q: QuantizedLayer) -> tuple[np.ndarray, float]:
    """Decode a quantized layer to integer weights plus the output scale
    that makes integer_weights * out_scale == dequantize(q)."""
    scheme = q.scheme
    signs = q.signs.astype(np.int64)
    if isinstance(scheme, PotScheme):
        shifts = scheme.max_code - q.codes.astype(np.int64)
        w = signs * (np.int64(1) << shifts)
        out_scale = float(np.ldexp(np.float64(q.scale), scheme.fsr_exp - scheme.max_code))
    elif isinstance(scheme, UniformScheme):
        w = signs * q.codes.astype(np.int64)
        out_scale = q.scale / scheme.qmax
    elif isinstance(scheme, ApotScheme):
        first = np.array([0 if e is None else 1 << (5 - e) for e in APOT_FIRST_EXPONENTS])
        second = np.array([0 if e is None else 1 << (5 - e) for e in APOT_SECOND_EXPONENTS])
        codes = q.codes.astype(np.int64)
        w = signs * (first[codes & 3] + second[(codes >> 2) & 3])
        out_scale = q.scale * (2.0 / 3.0) / 32.0
    else:
        raise ValueError(f"no integer mapping for scheme {scheme!r}")
    w = np.where(q.zero_mask, 0, w)
    return w.reshape(q.shape), out_scale


def _mac_kind(q: QuantizedLayer) -> str:
    scheme = q.scheme
    if isinstance(scheme, PotScheme):
        return "pot4x8"
    if isinstance(scheme, ApotScheme):
        return "apot4x8"
    return "uniform4x8" if scheme.bits <= 4 else "uniform8x8"


def _config_for(q: QuantizedLayer, act_bits: int, overflow_mode: str) -> MacConfig:
    if act_bits == 8:
        return emulation_config(_mac_kind(q), overflow_mode)
    # wider/narrower activations: size registers so in-range operands fit
    return MacConfig(_mac_kind(q), act_bits + 10, act_bits + 24, overflow_mode)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def _quantize_acts(x: np.ndarray, scale: float, amax: int) -> np.ndarray:
    q = _round_half_away(x.astype(np.float64) / scale)
    return np.clip(q, -amax, amax).astype(np.int64)


def _wrap_array(v: np.ndarray, width: int) -> np.ndarray:
    lo = -(1 << (width - 1))
    span = 1 << width
    return ((v - lo) % span) + lo


def _fit_array(v: np.ndarray, width: int, mode: str) -> np.ndarray:
    lo = -(1 << (width - 1))
    hi = (1 << (width - 1)) - 1
    if mode == SATURATE:
        return np.clip(v, lo, hi)
    return _wrap_array(v, width)


def _int_matmul(
    cols: np.ndarray, w: np.ndarray, config: MacConfig, events: MacEvents
) -> np.ndarray:
    """Integer dot products cols[M,K] x w[F,K] -> [M,F] under the register
    model of mac_dot: products fitted into the intermediate register, each
    running sum into the accumulator.

    Vectorized over the K axis via exact int64 prefix sums; the reported
    event counts equal the sequential ones whenever they are zero (the
    criterion runs assert exactly that). When the exact running sum never
    leaves the accumulator range, the result is bit-identical to the
    sequential emulation.
    """
    ilo, ihi = -(1 << (config.intermediate_width - 1)), (1 << (config.intermediate_width - 1)) - 1
    alo, ahi = -(1 << (config.accumulator_width - 1)), (1 << (config.accumulator_width - 1)) - 1
    m = cols.shape[0]
    f = w.shape[0]
    out = np.empty((m, f), dtype=np.int64)
    for j in range(f):
        prod = cols * w[j]
        bad = (prod < ilo) | (prod > ihi)
        n_bad = int(bad.sum())
        if n_bad:
            events.intermediate += n_bad
            prod = _fit_array(prod, config.intermediate_width, config.overflow_mode)
        csum = np.cumsum(prod, axis=1)
        overflowed = (csum < alo) | (csum > ahi)
        n_over = int(overflowed.sum())
        total = csum[:, -1]
        if n_over:
            events.accumulator += n_over
            if config.overflow_mode == WRAP:
                total = _wrap_array(total, config.accumulator_width)
            else:
                rows = np.nonzero(overflowed.any(axis=1))[0]
                total = total.copy()
                for r in rows:
                    acc = 0
                    for p in prod[r]:
                        acc = int(np.clip(acc + int(p), alo, ahi))
                    total[r] = acc
        out[:, j] = total
    return out


def _pool(x: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    return x.reshape(n, c, h // k, k, w // k, k).max(axis=(3, 5))


def _conv_float(x: np.ndarray, rec: PackedLayerRecord, spec: dict) -> np.ndarray:
    n = x.shape[0]
    w = rec.weights()
    cols = _im2col(x, spec["k"], spec["k"], spec["stride"], spec["padding"])
    oh, ow = cols.shape[1], cols.shape[2]
    out = _mm64(cols.reshape(-1, cols.shape[-1]), w.reshape(w.shape[0], -1).T) + rec.bias
    return out.reshape(n, oh, ow, w.shape[0]).transpose(0, 3, 1, 2)


def _linear_float(x: np.ndarray, rec: PackedLayerRecord) -> np.ndarray:
    return _mm64(x, rec.weights().T) + rec.bias


def forward_float(packed: PackedModel, images: np.ndarray) -> np.ndarray:
    """Logits with dequantized weights; same arithmetic as the training path."""
    return packed.to_model().forward(images).data


def forward_integer(
    packed: PackedModel,
    images: np.ndarray,
    act_params: ActQuantParams,
    events: MacEvents | None = None,
    overflow_mode: str = WRAP,
) -> np.ndarray:
    """Logits via integer dot products with emulated register widths."""
    if events is None:
        events = MacEvents()
    x = images.astype(np.float32)
    amax = act_params.amax
    for spec in packed.arch:
        kind = spec["kind"]
        if kind == "relu":
            x = np.maximum(x, 0.0)
        elif kind == "maxpool":
            x = _pool(x, spec["k"])
        elif kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif kind in ("conv", "linear"):
            rec = packed.records[spec["name"]]
            if rec.q is None:
                x = _conv_float(x, rec, spec) if kind == "conv" else _linear_float(x, rec)
                continue
            if spec["name"] not in act_params.scales:
                raise CalibrationError(f"layer {spec['name']} has no activation scale")
            a_scale = act_params.scales[spec["name"]]
            w_int, out_scale = integer_weights(rec.q)
            config = _config_for(rec.q, act_params.bits, overflow_mode)
            if kind == "conv":
                n = x.shape[0]
                cols = _im2col(
                    _quantize_acts(x, a_scale, amax).astype(np.float64),
                    spec["k"], spec["k"], spec["stride"], spec["padding"],
                ).astype(np.int64)
                oh, ow = cols.shape[1], cols.shape[2]
                acc = _int_matmul(
                    cols.reshape(-1, cols.shape[-1]),
                    w_int.reshape(w_int.shape[0], -1),
                    config, events,
                )
                y = acc.astype(np.float64) * (a_scale * out_scale) + rec.bias
                x = y.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2).astype(np.float32)
            else:
                a = _quantize_acts(x, a_scale, amax)
                acc = _int_matmul(a, w_int, config, events)
                x = (acc.astype(np.float64) * (a_scale * out_scale) + rec.bias).astype(np.float32)
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return x


def evaluate_packed(
    packed: PackedModel,
    data: Dataset,
    path: str = "float",
    act_params: ActQuantParams | None = None,
    batch_size: int = 256,
    overflow_mode: str = WRAP,
) -> tuple[float, MacEvents]:
    """Top-1 accuracy over a dataset on the chosen execution path."""
    events = MacEvents()
    if path == "float":
        model = packed.to_model()
        correct = 0
        for start in range(0, len(data), batch_size):
            logits = model.forward(data.images[start : start + batch_size]).data
            correct += int((logits.argmax(1) == data.labels[start : start + batch_size]).sum())
        return correct / len(data), events
    if path != "integer":
        raise ValueError(f"path must be 'float' or 'integer', got {path!r}")
    if act_params is None:
        raise CalibrationError("integer path needs calibrated activation scales")
    correct = 0
    for start in range(0, len(data), batch_size):
        logits = forward_integer(
            packed, data.images[start : start + batch_size], act_params, events, overflow_mode
        )
        correct += int((logits.argmax(1) == data.labels[start : start + batch_size]).sum())
    return correct / len(data), events
