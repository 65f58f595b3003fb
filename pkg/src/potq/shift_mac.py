"""Bit-exact emulation of four multiply-accumulate datapaths plus their
static hardware cost table.

The four units share an 8-bit activation input and differ in how the
weight operand is applied:

  uniform8x8 -- 8-bit signed multiply
  uniform4x8 -- 4-bit sign-magnitude multiply (3 magnitude bits + sign)
  pot4x8     -- single left shift by the stored exponent, then sign correction
  apot4x8    -- two left shifts summed, then sign correction

Products and running sums are held in fixed-width registers; anything that
leaves the representable range is wrapped or saturated per the config and
counted, so callers can assert that a run stayed clean.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "MAC_KINDS",
    "MacConfig",
    "MacEvents",
    "WeightCode",
    "HwCostEntry",
    "synthesis_config",
    "emulation_config",
    "decode_weight",
    "shift_mul_pot",
    "shift_mul_apot",
    "mul_uniform",
    "mac_dot",
    "cost_report",
    "cost_table",
    "mac_self_check",
]

MAC_KINDS = ("uniform8x8", "uniform4x8", "pot4x8", "apot4x8")

WRAP = "wrap"
SATURATE = "saturate"


@dataclass(frozen=True)
class MacConfig:
    kind: str
    intermediate_width: int
    accumulator_width: int
    overflow_mode: str = WRAP

    def __post_init__(self) -> None:
        if self.kind not in MAC_KINDS:
            raise ValueError(f"unknown MAC kind {self.kind!r}")
        if self.overflow_mode not in (WRAP, SATURATE):
            raise ValueError("overflow_mode must be 'wrap' or 'saturate'")
        if self.intermediate_width < 2 or self.accumulator_width < 2:
            raise ValueError("register widths must be at least 2 bits")


# Register widths of the four synthesized design points.
_SYNTHESIS_WIDTHS = {
    "uniform8x8": (16, 24),
    "uniform4x8": (12, 16),
    "pot4x8": (12, 16),
    "apot4x8": (12, 16),
}

# Widths sufficient for value-exact emulation of the decoded integer
# weights: a shift by up to 7 of an 8-bit activation needs 15 magnitude
# bits (two shifts summed need 16), which the 12-bit design register
# cannot hold. Emulation therefore runs 18/32 for the shift-based kinds.
_EMULATION_WIDTHS = {
    "uniform8x8": (16, 24),
    "uniform4x8": (12, 16),
    "pot4x8": (18, 32),
    "apot4x8": (18, 32),
}


def synthesis_config(kind: str, overflow_mode: str = WRAP) -> MacConfig:
    """Config with the register widths of the synthesized designs."""
    iw, aw = _SYNTHESIS_WIDTHS[kind]
    return MacConfig(kind, iw, aw, overflow_mode)


def emulation_config(kind: str, overflow_mode: str = WRAP) -> MacConfig:
    """Config wide enough that in-range operands never clamp."""
    iw, aw = _EMULATION_WIDTHS[kind]
    return MacConfig(kind, iw, aw, overflow_mode)


@dataclass
class MacEvents:
    """Counts of values that left a register's range."""

    intermediate: int = 0
    accumulator: int = 0

    def total(self) -> int:
        return self.intermediate + self.accumulator

    def merge(self, other: "MacEvents") -> None:
        self.intermediate += other.intermediate
        self.accumulator += other.accumulator


@dataclass(frozen=True)
class WeightCode:
    """One weight operand.

    payload meaning depends on the MAC kind:
      uniform kinds -- integer magnitude
      pot4x8        -- shift amount k in [0, 7]
      apot4x8       -- (k1, k2), each a shift in [0, 7] or None (absent)
    """

    sign: int
    payload: int | tuple[int | None, int | None] | None

    def __post_init__(self) -> None:
        if self.sign not in (-1, 1):
            raise ValueError("sign must be -1 or +1")


def decode_weight(kind: str, code: WeightCode) -> int:
    """Wide-integer value of a weight code."""
    if kind in ("uniform8x8", "uniform4x8"):
        return code.sign * int(code.payload)
    if kind == "pot4x8":
        return code.sign * (1 << int(code.payload))
    if kind == "apot4x8":
        k1, k2 = code.payload
        v = (0 if k1 is None else 1 << k1) + (0 if k2 is None else 1 << k2)
        return code.sign * v
    raise ValueError(f"unknown MAC kind {kind!r}")


def _fit(value: int, width: int, mode: str, events: MacEvents | None, register: str) -> int:
    lo = -(1 << (width - 1))
    hi = (1 << (width - 1)) - 1
    if lo <= value <= hi:
        return value
    if events is not None:
        if register == "intermediate":
            events.intermediate += 1
        else:
            events.accumulator += 1
    if mode == SATURATE:
        return lo if value < lo else hi
    span = 1 << width
    return ((value - lo) % span) + lo


def shift_mul_pot(
    act: int,
    sign: int,
    k: int,
    config: MacConfig | None = None,
    events: MacEvents | None = None,
) -> int:
    """sign * (act << k). Without a config the exact product is returned;
    with one, the value is fitted into the intermediate register."""
    if not 0 <= k <= 7:
        raise ValueError("shift amount must be in [0, 7]")
    value = sign * (act << k)
    if config is None:
        return value
    return _fit(value, config.intermediate_width, config.overflow_mode, events, "intermediate")


def shift_mul_apot(
    act: int,
    sign: int,
    k1: int | None,
    k2: int | None,
    config: MacConfig | None = None,
    events: MacEvents | None = None,
) -> int:
    """sign * ((act << k1) + (act << k2)) with absent terms contributing 0."""
    for k in (k1, k2):
        if k is not None and not 0 <= k <= 7:
            raise ValueError("shift amount must be in [0, 7]")
    p1 = 0 if k1 is None else act << k1
    p2 = 0 if k2 is None else act << k2
    value = sign * (p1 + p2)
    if config is None:
        return value
    return _fit(value, config.intermediate_width, config.overflow_mode, events, "intermediate")


def mul_uniform(
    act: int,
    sign: int,
    magnitude: int,
    config: MacConfig | None = None,
    events: MacEvents | None = None,
) -> int:
    value = sign * magnitude * act
    if config is None:
        return value
    return _fit(value, config.intermediate_width, config.overflow_mode, events, "intermediate")


def _product(kind: str, act: int, code: WeightCode, config: MacConfig, events: MacEvents | None) -> int:
    if kind == "pot4x8":
        return shift_mul_pot(act, code.sign, code.payload, config, events)
    if kind == "apot4x8":
        k1, k2 = code.payload
        return shift_mul_apot(act, code.sign, k1, k2, config, events)
    return mul_uniform(act, code.sign, code.payload, config, events)


def mac_dot(
    config: MacConfig,
    acts: list[int],
    codes: list[WeightCode],
    events: MacEvents | None = None,
) -> int:
    """Sequential multiply-accumulate: each product is fitted into the
    intermediate register, each running sum into the accumulator."""
    if len(acts) != len(codes):
        raise ValueError(f"length mismatch: {len(acts)} activations vs {len(codes)} weights")
    acc = 0
    for act, code in zip(acts, codes):
        p = _product(config.kind, int(act), code, config, events)
        acc = _fit(acc + p, config.accumulator_width, config.overflow_mode, events, "accumulator")
    return acc


# ---------------------------------------------------------------------------
# static hardware costs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HwCostEntry:
    kind: str
    label: str
    lut: int
    ff: int
    rel_power: float
    rel_area: float


_COST_TABLE = {
    "uniform8x8": HwCostEntry("uniform8x8", "Uniform 8x8", 87, 39, 1.0, 1.0),
    "uniform4x8": HwCostEntry("uniform4x8", "Uniform 4x8", 46, 27, 1 / 2.5, 1 / 1.7),
    "apot4x8": HwCostEntry("apot4x8", "APoT 4x8", 55, 49, 1 / 3, 1 / 1.3),
    "pot4x8": HwCostEntry("pot4x8", "PoT 4x8", 39, 25, 1 / 6, 1 / 2),
}


def cost_report(kind: str) -> HwCostEntry:
    """Post-synthesis resource/power/area constants for one MAC kind."""
    if kind not in _COST_TABLE:
        raise ValueError(f"unknown MAC kind {kind!r}")
    return _COST_TABLE[kind]


def cost_table() -> list[HwCostEntry]:
    return [_COST_TABLE[k] for k in ("uniform8x8", "uniform4x8", "apot4x8", "pot4x8")]


def mac_self_check() -> tuple[bool, int]:
    """Exhaustive equivalence of shift-based products against wide-integer
    multiplication of the decoded weights.

    Covers all 256 activations x 16 pot codes (sign x shift) and all
    apot code pairs. Returns (passed, cases_checked).
    """
    cases = 0
    for act in range(-128, 128):
        for sign in (-1, 1):
            for k in range(8):
                code = WeightCode(sign, k)
                if shift_mul_pot(act, sign, k) != act * decode_weight("pot4x8", code):
                    return False, cases
                cases += 1
    shifts: list[int | None] = [None, 0, 1, 2, 3, 4, 5, 6, 7]
    for act in range(-128, 128):
        for sign in (-1, 1):
            for k1 in shifts:
                for k2 in shifts:
                    code = WeightCode(sign, (k1, k2))
                    got = shift_mul_apot(act, sign, k1, k2)
                    if got != act * decode_weight("apot4x8", code):
                        return False, cases
                    cases += 1
    return True, cases
