"""Bit-packed model serialization and size/traffic accounting.

File format (little-endian, magic "PQT1", version 1):

  magic           4 bytes  "PQT1"
  version         u8       1
  layer_count     u8

  per layer:
    kind          u8       0=conv 1=linear 2=relu 3=maxpool 4=flatten
    conv:    name (u8 len + utf8), out_ch u16, in_ch u16, k u8, stride u8, pad u8
    linear:  name (u8 len + utf8), out_f u32, in_f u32
    maxpool: k u8

    conv/linear additionally:
      scheme_tag  u8       0=float 1=uniform 2=pot 3=apot
      bits u8, fsr_exp i8, terms u8
      weight_scale f32, act_scale f32 (0.0 = uncalibrated)
      bias        f32 x out_channels
      float scheme:  raw_len u32 + float32 weights
      quantized:     mask_flag u8 [+ ceil(n/8) mask bytes, LSB-first]
                     payload_len u32 + payload

Payload: one field per weight, 1 sign bit (1 = negative) in the lowest
position followed by the code bits, fields packed densely LSB-first within
each byte and padded to a byte boundary per layer. Code bits: bits-1 for
pot/uniform, 4 (two 2-bit terms) for apot. Pruned weights are written as
the reserved pattern sign=0 / code=all-ones; whenever a layer has pruned
weights the mask bitmap is present and authoritative, so the reserved
pattern never shadows the legitimate all-ones code.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .models import Model, build_model
from .quantizers import (
    APOT_ABSENT,
    ApotScheme,
    FloatScheme,
    PotScheme,
    QuantizedLayer,
    Scheme,
    UniformScheme,
    apot_code,
)

__all__ = [
    "MAGIC",
    "VERSION",
    "FormatError",
    "PackedLayerRecord",
    "PackedModel",
    "SizeReport",
    "TrafficReport",
    "code_bits",
    "bits_per_weight",
    "encode_layer",
    "decode_layer",
    "build_packed",
    "model_size_report",
    "memory_traffic_report",
]

MAGIC = b"PQT1"
VERSION = 1

_KIND_CODES = {"conv": 0, "linear": 1, "relu": 2, "maxpool": 3, "flatten": 4}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_SCHEME_TAGS = {"float": 0, "uniform": 1, "pot": 2, "apot": 3}


class FormatError(ValueError):
    """Corrupt or unsupported packed-model data."""


def code_bits(scheme: Scheme) -> int:
    if isinstance(scheme, (PotScheme, UniformScheme)):
        return scheme.bits - 1
    if isinstance(scheme, ApotScheme):
        return 2 * scheme.terms
    raise ValueError(f"scheme {scheme!r} has no packed code")


def bits_per_weight(scheme: Scheme) -> int:
    return 1 + code_bits(scheme)


def _canonical_masked_code(scheme: Scheme) -> int:
    if isinstance(scheme, PotScheme):
        return scheme.max_code
    if isinstance(scheme, UniformScheme):
        return 0
    if isinstance(scheme, ApotScheme):
        return apot_code(APOT_ABSENT, APOT_ABSENT)
    raise ValueError(f"scheme {scheme!r} has no packed code")


def _pack_bits(values: np.ndarray, width: int) -> bytes:
    bits = ((values[:, None] >> np.arange(width)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def _unpack_bits(buf: bytes, width: int, count: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    if bits.size < count * width:
        raise FormatError("payload shorter than the declared weight count")
    bits = bits[: count * width].reshape(count, width).astype(np.int64)
    return (bits << np.arange(width)).sum(axis=1)


def encode_layer(q: QuantizedLayer) -> bytes:
    """Payload bytes for one quantized layer (descriptor excluded)."""
    cb = code_bits(q.scheme)
    reserved = (1 << cb) - 1
    codes = q.codes.astype(np.int64)
    signs = (q.signs < 0).astype(np.int64)
    codes = np.where(q.zero_mask, reserved, codes)
    signs = np.where(q.zero_mask, 0, signs)
    return _pack_bits(signs | (codes << 1), 1 + cb)


def decode_layer(
    payload: bytes,
    scheme: Scheme,
    shape: tuple[int, ...],
    scale: float,
    zero_mask: np.ndarray | None = None,
) -> QuantizedLayer:
    """Inverse of encode_layer; the mask bitmap, when present, overrides the
    reserved payload pattern and masked entries get their canonical code."""
    n = int(np.prod(shape))
    fields = _unpack_bits(payload, 1 + code_bits(scheme), n)
    signs = np.where(fields & 1, -1, 1).astype(np.int8)
    codes = (fields >> 1).astype(np.int16)
    if zero_mask is None:
        zero_mask = np.zeros(n, dtype=bool)
    else:
        zero_mask = np.asarray(zero_mask, dtype=bool).reshape(n)
        codes[zero_mask] = _canonical_masked_code(scheme)
        signs[zero_mask] = 1
    return QuantizedLayer(scheme, tuple(shape), signs, codes, zero_mask.copy(), scale)


@dataclass
class PackedLayerRecord:
    """Serialized state of one trainable layer."""

    name: str
    scheme: Scheme
    shape: tuple[int, ...]
    bias: np.ndarray
    act_scale: float = 0.0
    q: QuantizedLayer | None = None
    raw_w: np.ndarray | None = None

    @property
    def n_weights(self) -> int:
        return int(np.prod(self.shape))

    def weights(self) -> np.ndarray:
        from .quantizers import dequantize

        if self.q is not None:
            return dequantize(self.q)
        return self.raw_w


class PackedModel:
    """Architecture plus per-trainable-layer packed weights."""

    def __init__(self, arch: list[dict], records: dict[str, PackedLayerRecord]):
        self.arch = arch
        self.records = records

    def trainable_names(self) -> list[str]:
        return [spec["name"] for spec in self.arch if spec["kind"] in ("conv", "linear")]

    def to_model(self) -> Model:
        model = build_model(self.arch)
        for layer in model.trainable():
            rec = self.records[layer.name]
            layer.w.data = rec.weights().astype(np.float32)
            layer.b.data = rec.bias.astype(np.float32).copy()
        return model

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += MAGIC
        out += struct.pack("<BB", VERSION, len(self.arch))
        for spec in self.arch:
            kind = spec["kind"]
            out.append(_KIND_CODES[kind])
            if kind == "conv":
                name = spec["name"].encode()
                out += struct.pack("<B", len(name)) + name
                out += struct.pack(
                    "<HHBBB", spec["out_ch"], spec["in_ch"], spec["k"],
                    spec["stride"], spec["padding"],
                )
            elif kind == "linear":
                name = spec["name"].encode()
                out += struct.pack("<B", len(name)) + name
                out += struct.pack("<II", spec["out_f"], spec["in_f"])
            elif kind == "maxpool":
                out += struct.pack("<B", spec["k"])
            if kind not in ("conv", "linear"):
                continue

            rec = self.records[spec["name"]]
            tag = _SCHEME_TAGS[rec.scheme.tag()]
            bits = getattr(rec.scheme, "bits", 0)
            fsr = getattr(rec.scheme, "fsr_exp", 0)
            terms = getattr(rec.scheme, "terms", 0)
            scale = rec.q.scale if rec.q is not None else 0.0
            out += struct.pack("<BBbB", tag, bits, fsr, terms)
            out += struct.pack("<ff", scale, rec.act_scale)
            out += rec.bias.astype("<f4").tobytes()
            if tag == 0:
                raw = rec.raw_w.astype("<f4").tobytes()
                out += struct.pack("<I", len(raw))
                out += raw
            else:
                has_mask = bool(rec.q.zero_mask.any())
                out += struct.pack("<B", 1 if has_mask else 0)
                if has_mask:
                    out += np.packbits(rec.q.zero_mask, bitorder="little").tobytes()
                payload = encode_layer(rec.q)
                out += struct.pack("<I", len(payload))
                out += payload
        return bytes(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PackedModel":
        cur = _Cursor(blob)
        if cur.take(4) != MAGIC:
            raise FormatError("bad magic; not a packed model file")
        version, n_layers = struct.unpack("<BB", cur.take(2))
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        arch: list[dict] = []
        records: dict[str, PackedLayerRecord] = {}
        for _ in range(n_layers):
            kind_code = cur.take(1)[0]
            if kind_code not in _KIND_NAMES:
                raise FormatError(f"unknown layer kind code {kind_code}")
            kind = _KIND_NAMES[kind_code]
            if kind == "conv":
                name = cur.take(cur.take(1)[0]).decode()
                out_ch, in_ch, k, stride, padding = struct.unpack("<HHBBB", cur.take(7))
                spec = {"kind": kind, "name": name, "in_ch": in_ch, "out_ch": out_ch,
                        "k": k, "stride": stride, "padding": padding}
                shape: tuple[int, ...] = (out_ch, in_ch, k, k)
                n_out = out_ch
            elif kind == "linear":
                name = cur.take(cur.take(1)[0]).decode()
                out_f, in_f = struct.unpack("<II", cur.take(8))
                spec = {"kind": kind, "name": name, "in_f": in_f, "out_f": out_f}
                shape = (out_f, in_f)
                n_out = out_f
            elif kind == "maxpool":
                spec = {"kind": kind, "k": cur.take(1)[0]}
                arch.append(spec)
                continue
            else:
                arch.append({"kind": kind})
                continue
            arch.append(spec)

            tag, bits, fsr, terms = struct.unpack("<BBbB", cur.take(4))
            scale, act_scale = struct.unpack("<ff", cur.take(8))
            bias = np.frombuffer(cur.take(4 * n_out), dtype="<f4").astype(np.float32)
            n = int(np.prod(shape))
            if tag == 0:
                raw_len = struct.unpack("<I", cur.take(4))[0]
                raw = np.frombuffer(cur.take(raw_len), dtype="<f4").astype(np.float32)
                records[spec["name"]] = PackedLayerRecord(
                    spec["name"], FloatScheme(), shape, bias, act_scale,
                    raw_w=raw.reshape(shape),
                )
                continue
            if tag == 1:
                scheme: Scheme = UniformScheme(bits)
            elif tag == 2:
                scheme = PotScheme(bits, fsr)
            elif tag == 3:
                scheme = ApotScheme(bits, terms)
            else:
                raise FormatError(f"unknown scheme tag {tag}")
            mask = None
            if cur.take(1)[0]:
                mask_bytes = cur.take(math.ceil(n / 8))
                mask = np.unpackbits(
                    np.frombuffer(mask_bytes, dtype=np.uint8), bitorder="little"
                )[:n].astype(bool)
            payload_len = struct.unpack("<I", cur.take(4))[0]
            payload = cur.take(payload_len)
            q = decode_layer(payload, scheme, shape, scale, mask)
            records[spec["name"]] = PackedLayerRecord(
                spec["name"], scheme, shape, bias, act_scale, q=q,
            )
        return cls(arch, records)

    def save(self, path: str) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path: str) -> "PackedModel":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("truncated packed model file")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk


def build_packed(
    model: Model,
    quantized: dict[str, QuantizedLayer | None],
    act_scales: dict[str, float] | None = None,
) -> PackedModel:
    """Assemble a PackedModel from a live model and its quantized layers.

    Layers mapped to None stay in float32.
    """
    records = {}
    for layer in model.trainable():
        q = quantized.get(layer.name)
        act = float(act_scales.get(layer.name, 0.0)) if act_scales else 0.0
        if q is None:
            records[layer.name] = PackedLayerRecord(
                layer.name, FloatScheme(), layer.w.data.shape,
                layer.b.data.copy(), act, raw_w=layer.w.data.copy(),
            )
        else:
            records[layer.name] = PackedLayerRecord(
                layer.name, q.scheme, q.shape, layer.b.data.copy(), act, q=q,
            )
    return PackedModel(model.arch(), records)


# ---------------------------------------------------------------------------
# size and traffic accounting
# ---------------------------------------------------------------------------

@dataclass
class SizeReport:
    packed_bytes: int
    baseline_bytes: int
    compression_ratio: float
    zero_fraction: float
    per_layer: list[tuple[str, int, int, int]]  # name, weights, payload, baseline payload


@dataclass
class TrafficReport:
    words_read: int
    baseline_words: int
    transactions_vs_8bit_ratio: float
    word_bits: int


def _payload_bytes(rec: PackedLayerRecord) -> int:
    if rec.q is None:
        return 4 * rec.n_weights
    return math.ceil(rec.n_weights * bits_per_weight(rec.q.scheme) / 8)


def model_size_report(packed: PackedModel, baseline_bits: int = 8) -> SizeReport:
    """Packed file size against a same-structure file at baseline_bits per
    weight. Headers, biases and mask bitmaps are identical on both sides."""
    if not packed.records:
        raise ValueError("model has no trainable layers to report on")
    packed_bytes = len(packed.to_bytes())
    delta = 0
    masked = 0
    total = 0
    per_layer = []
    for name in packed.trainable_names():
        rec = packed.records[name]
        actual = _payload_bytes(rec)
        baseline = math.ceil(rec.n_weights * baseline_bits / 8)
        delta += baseline - actual
        total += rec.n_weights
        if rec.q is not None:
            masked += int(rec.q.zero_mask.sum())
        per_layer.append((name, rec.n_weights, actual, baseline))
    baseline_bytes = packed_bytes + delta
    return SizeReport(
        packed_bytes=packed_bytes,
        baseline_bytes=baseline_bytes,
        compression_ratio=packed_bytes / baseline_bytes,
        zero_fraction=masked / total,
        per_layer=per_layer,
    )


def memory_traffic_report(packed: PackedModel, word_bits: int = 32) -> TrafficReport:
    """Memory words needed to stream every weight once, against an 8-bit
    packing of the same model."""
    if not packed.records:
        raise ValueError("model has no trainable layers to report on")
    words = 0
    base = 0
    for rec in packed.records.values():
        bpw = 32 if rec.q is None else bits_per_weight(rec.q.scheme)
        words += math.ceil(rec.n_weights * bpw / word_bits)
        base += math.ceil(rec.n_weights * 8 / word_bits)
    return TrafficReport(words, base, words / base, word_bits)
