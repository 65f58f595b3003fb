"""Weight quantizers: power-of-two (log domain), symmetric uniform, and
two-term additive power-of-two, sharing max-abs scale normalization.

All quantizers are layer-wise: one positive scale factor per weight tensor,
signs stored separately from magnitude codes. Bit widths count the sign bit,
so an n-bit scheme keeps n-1 bits for the magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "FloatScheme",
    "UniformScheme",
    "PotScheme",
    "ApotScheme",
    "Scheme",
    "PruneConfig",
    "QuantizedLayer",
    "compute_scale",
    "logquant_exponent",
    "quantize_pot",
    "quantize_uniform",
    "quantize_apot",
    "quantize",
    "dequantize",
    "quant_levels",
    "APOT_FIRST_EXPONENTS",
    "APOT_SECOND_EXPONENTS",
    "APOT_ABSENT",
    "apot_terms",
    "apot_code",
]


@dataclass(frozen=True)
class FloatScheme:
    """Leave the layer in float32 (no quantization)."""

    def tag(self) -> str:
        return "float"


@dataclass(frozen=True)
class UniformScheme:
    """Symmetric linear levels {-(2^(bits-1)-1) .. +(2^(bits-1)-1)} * step."""

    bits: int

    def __post_init__(self) -> None:
        if not 2 <= self.bits <= 8:
            raise ValueError(f"uniform bits must be in 2..8, got {self.bits}")

    def tag(self) -> str:
        return "uniform"

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1


@dataclass(frozen=True)
class PotScheme:
    """Power-of-two magnitudes 2^(fsr_exp - c), codes c in [0, 2^(bits-1)-1]."""

    bits: int
    fsr_exp: int = 0

    def __post_init__(self) -> None:
        if not 2 <= self.bits <= 8:
            raise ValueError(f"pot bits must be in 2..8, got {self.bits}")

    def tag(self) -> str:
        return "pot"

    @property
    def max_code(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def min_exponent(self) -> int:
        return self.fsr_exp - self.max_code


# First/second term exponents of the two-term scheme; index 3 means the
# term is absent. Raw magnitudes 2^-a + 2^-b peak at 1.5, so normalized
# levels carry a 2/3 factor.
APOT_FIRST_EXPONENTS: tuple[int | None, ...] = (0, 2, 4, None)
APOT_SECOND_EXPONENTS: tuple[int | None, ...] = (1, 3, 5, None)
APOT_ABSENT = 3
_APOT_NORM = 2.0 / 3.0


@dataclass(frozen=True)
class ApotScheme:
    """Sum of two power-of-two terms per weight, one 2-bit code per term."""

    bits: int = 4
    terms: int = 2

    def __post_init__(self) -> None:
        if self.bits != 4 or self.terms != 2:
            raise ValueError("only the 4-bit / 2-term variant is supported")

    def tag(self) -> str:
        return "apot"


Scheme = Union[FloatScheme, UniformScheme, PotScheme, ApotScheme]


@dataclass(frozen=True)
class PruneConfig:
    """Zero out weights whose normalized magnitude is at most
    pf * (minimum quantization level)."""

    pf: float = 0.0

    def __post_init__(self) -> None:
        if self.pf < 0:
            raise ValueError("pruning factor must be >= 0")


@dataclass
class QuantizedLayer:
    """Sign/code representation of one weight tensor.

    codes are flat int16:
      pot     -- c, magnitude 2^(fsr_exp - c)
      uniform -- integer magnitude, level code * scale / qmax
      apot    -- packed nibble a_idx + 4*b_idx into the term tables
    Masked entries carry canonical sign +1 and the scheme's canonical code
    (pot: max_code, uniform: 0, apot: both terms absent) so layers compare
    and round-trip exactly.
    """

    scheme: Scheme
    shape: tuple[int, ...]
    signs: np.ndarray
    codes: np.ndarray
    zero_mask: np.ndarray
    scale: float

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def n_weights(self) -> int:
        return int(np.prod(self.shape))

    def zero_fraction(self) -> float:
        return float(self.zero_mask.mean()) if self.zero_mask.size else 0.0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizedLayer):
            return NotImplemented
        return (
            self.scheme == other.scheme
            and self.shape == other.shape
            and self.scale == other.scale
            and np.array_equal(self.signs, other.signs)
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.zero_mask, other.zero_mask)
        )


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def compute_scale(w: np.ndarray) -> float:
    """Layer scale factor: max(abs(w)); 1.0 when all weights are zero."""
    w = np.asarray(w)
    if w.size == 0:
        raise ValueError("cannot compute scale of an empty tensor")
    sf = float(np.max(np.abs(w)))
    return sf if sf > 0 else 1.0


def logquant_exponent(x_norm: float, bits: int, fsr_exp: int = 0) -> int | None:
    """Code for one normalized weight: round(log2|x|) clipped to the
    representable exponent range, returned as c = fsr_exp - exponent.

    Returns None for exact zero. Values below the minimum level are
    promoted to it; values above the top level clip to code 0.
    """
    if bits < 2:
        raise ValueError("bits must be >= 2")
    if x_norm == 0:
        return None
    min_exp = fsr_exp - (2 ** (bits - 1) - 1)
    e = float(_round_half_away(np.log2(abs(float(x_norm)))))
    e = min(max(e, min_exp), fsr_exp)
    return int(fsr_exp - e)


def quantize_pot(
    w: np.ndarray, scheme: PotScheme, prune: PruneConfig = PruneConfig(0.0)
) -> QuantizedLayer:
    """Normalize by max-abs, prune against the minimum level, round each
    magnitude to the nearest power of two in the log domain."""
    w = np.asarray(w, dtype=np.float32)
    sf = compute_scale(w)
    flat = w.reshape(-1).astype(np.float64)
    wn = flat / sf

    threshold = prune.pf * 2.0 ** scheme.min_exponent
    mask = np.abs(wn) <= threshold  # non-strict; covers exact zeros at pf=0

    codes = np.full(flat.shape, scheme.max_code, dtype=np.int16)
    signs = np.ones(flat.shape, dtype=np.int8)
    live = ~mask
    if live.any():
        e = _round_half_away(np.log2(np.abs(wn[live])))
        e = np.clip(e, scheme.min_exponent, scheme.fsr_exp)
        codes[live] = (scheme.fsr_exp - e).astype(np.int16)
        signs[live] = np.where(wn[live] < 0, -1, 1).astype(np.int8)
    return QuantizedLayer(scheme, w.shape, signs, codes, mask, sf)


def quantize_uniform(w: np.ndarray, bits: int) -> QuantizedLayer:
    """Symmetric linear quantization; magnitudes rounding to level 0 are
    masked (the automatic pruning uniform quantization exhibits)."""
    scheme = UniformScheme(bits)
    w = np.asarray(w, dtype=np.float32)
    sf = compute_scale(w)
    flat = w.reshape(-1).astype(np.float64)
    step = sf / scheme.qmax
    mags = np.clip(_round_half_away(np.abs(flat) / step), 0, scheme.qmax).astype(np.int16)
    mask = mags == 0
    signs = np.where(flat < 0, -1, 1).astype(np.int8)
    signs[mask] = 1
    codes = mags
    codes[mask] = 0
    return QuantizedLayer(scheme, w.shape, signs, codes, mask, sf)


def _apot_magnitudes() -> np.ndarray:
    """Normalized magnitude per packed code nibble (a_idx + 4*b_idx)."""
    mags = np.zeros(16, dtype=np.float64)
    for bi, be in enumerate(APOT_SECOND_EXPONENTS):
        for ai, ae in enumerate(APOT_FIRST_EXPONENTS):
            va = 0.0 if ae is None else 2.0 ** -ae
            vb = 0.0 if be is None else 2.0 ** -be
            mags[ai + 4 * bi] = (va + vb) * _APOT_NORM
    return mags


_APOT_MAGS = _apot_magnitudes()
# magnitude codebook sorted ascending, with the code for each entry
_APOT_ORDER = np.argsort(_APOT_MAGS, kind="stable")
_APOT_SORTED = _APOT_MAGS[_APOT_ORDER]


def apot_terms(code: int) -> tuple[int | None, int | None]:
    """Unpack a nibble into (first-term exponent, second-term exponent)."""
    return APOT_FIRST_EXPONENTS[code & 3], APOT_SECOND_EXPONENTS[(code >> 2) & 3]


def apot_code(a_idx: int, b_idx: int) -> int:
    return (a_idx & 3) + 4 * (b_idx & 3)


def quantize_apot(w: np.ndarray, scheme: ApotScheme = ApotScheme()) -> QuantizedLayer:
    """Map each normalized magnitude to the nearest two-term level.

    Zero is representable (both terms absent), so no weights are masked.
    Midpoints resolve to the smaller level.
    """
    w = np.asarray(w, dtype=np.float32)
    sf = compute_scale(w)
    flat = w.reshape(-1).astype(np.float64)
    m = np.abs(flat) / sf

    mids = (_APOT_SORTED[:-1] + _APOT_SORTED[1:]) / 2.0
    idx = np.searchsorted(mids, m, side="left")
    codes = _APOT_ORDER[idx].astype(np.int16)
    signs = np.where(flat < 0, -1, 1).astype(np.int8)
    zero = codes == apot_code(APOT_ABSENT, APOT_ABSENT)
    signs[zero] = 1
    mask = np.zeros(flat.shape, dtype=bool)
    return QuantizedLayer(scheme, w.shape, signs, codes, mask, sf)


def quantize(
    w: np.ndarray, scheme: Scheme, prune: PruneConfig = PruneConfig(0.0)
) -> QuantizedLayer:
    """Dispatch on the scheme tag. Pruning only applies to the log-domain
    quantizer; uniform prunes implicitly and the two-term scheme keeps an
    exact zero level."""
    if isinstance(scheme, PotScheme):
        return quantize_pot(w, scheme, prune)
    if isinstance(scheme, UniformScheme):
        return quantize_uniform(w, scheme.bits)
    if isinstance(scheme, ApotScheme):
        return quantize_apot(w, scheme)
    raise ValueError(f"cannot quantize with scheme {scheme!r}")


def dequantize(q: QuantizedLayer) -> np.ndarray:
    """Reconstruct float32 weights; exact for power-of-two levels."""
    scheme = q.scheme
    if isinstance(scheme, PotScheme):
        exps = scheme.fsr_exp - q.codes.astype(np.int64)
        vals = np.ldexp(np.float32(q.scale) * q.signs.astype(np.float32), exps)
    elif isinstance(scheme, UniformScheme):
        # compute in float64, round once: keeps the max level at exactly
        # the scale so requantization reproduces the same layer
        step = np.float64(q.scale) / scheme.qmax
        vals = (q.signs.astype(np.float64) * q.codes.astype(np.float64) * step)
    elif isinstance(scheme, ApotScheme):
        vals = (
            q.signs.astype(np.float32)
            * (_APOT_MAGS[q.codes] * q.scale).astype(np.float32)
        )
    else:
        raise ValueError(f"cannot dequantize scheme {scheme!r}")
    vals = np.where(q.zero_mask, np.float32(0.0), vals.astype(np.float32))
    return vals.reshape(q.shape)


def quant_levels(scheme: Scheme) -> np.ndarray:
    """All representable normalized values including 0, sorted ascending."""
    if isinstance(scheme, PotScheme):
        mags = np.ldexp(1.0, scheme.fsr_exp - np.arange(scheme.max_code + 1))
    elif isinstance(scheme, UniformScheme):
        mags = np.arange(1, scheme.qmax + 1, dtype=np.float64) / scheme.qmax
    elif isinstance(scheme, ApotScheme):
        mags = np.unique(_APOT_MAGS)
        mags = mags[mags > 0]
    else:
        raise ValueError("float scheme has no discrete levels")
    levels = np.concatenate([-mags, [0.0], mags])
    return np.sort(levels)
