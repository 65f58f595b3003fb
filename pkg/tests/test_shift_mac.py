"""Exhaustive shift/multiply equivalence, register-width behavior, cost table."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from potq.shift_mac import (
    MacConfig,
    MacEvents,
    WeightCode,
    cost_report,
    cost_table,
    decode_weight,
    emulation_config,
    mac_dot,
    mac_self_check,
    shift_mul_apot,
    shift_mul_pot,
    synthesis_config,
)


# ---------------------------------------------------------------------------
# single products
# ---------------------------------------------------------------------------

def test_shift_mul_pot_examples():
    assert shift_mul_pot(3, 1, 2) == 12
    assert shift_mul_pot(-5, -1, 0) == 5


def test_shift_mul_pot_exhaustive_against_multiply():
    for act in range(-128, 128):
        for sign in (-1, 1):
            for k in range(8):
                want = act * decode_weight("pot4x8", WeightCode(sign, k))
                assert shift_mul_pot(act, sign, k) == want


def test_shift_mul_apot_examples():
    assert shift_mul_apot(5, -1, 3, 1) == -50  # -5 * (8 + 2)
    assert shift_mul_apot(17, 1, None, None) == 0
    assert shift_mul_apot(9, -1, 4, None) == shift_mul_pot(9, -1, 4)


def test_shift_mul_apot_exhaustive_against_multiply():
    shifts = [None, 0, 1, 2, 3, 4, 5, 6, 7]
    for act in (-128, -127, -3, 0, 1, 77, 127):
        for sign in (-1, 1):
            for k1 in shifts:
                for k2 in shifts:
                    want = act * decode_weight("apot4x8", WeightCode(sign, (k1, k2)))
                    assert shift_mul_apot(act, sign, k1, k2) == want


def test_shift_amount_range_checked():
    with pytest.raises(ValueError):
        shift_mul_pot(1, 1, 8)


def test_pot_products_fit_emulation_intermediate():
    config = emulation_config("pot4x8")
    events = MacEvents()
    for act in (-128, -1, 0, 127):
        for k in (0, 7):
            for sign in (-1, 1):
                shift_mul_pot(act, sign, k, config, events)
    assert events.intermediate == 0


def test_narrow_intermediate_flags_clamping():
    config = synthesis_config("pot4x8", "saturate")  # 12-bit intermediate
    events = MacEvents()
    out = shift_mul_pot(127, 1, 7, config, events)
    assert events.intermediate == 1
    assert out == 2047  # saturated to the 12-bit maximum


# ---------------------------------------------------------------------------
# mac_dot
# ---------------------------------------------------------------------------

def test_mac_dot_empty():
    assert mac_dot(emulation_config("pot4x8"), [], []) == 0


def test_mac_dot_length_mismatch():
    with pytest.raises(ValueError):
        mac_dot(emulation_config("pot4x8"), [1], [])


def test_mac_dot_pot_equals_uniform_on_power_of_two_magnitudes():
    rng = np.random.default_rng(5)
    acts = rng.integers(-128, 128, size=32).tolist()
    ks = rng.integers(0, 3, size=32)  # magnitudes 1,2,4 exist in both code spaces
    signs = rng.choice([-1, 1], size=32)
    pot_codes = [WeightCode(int(s), int(k)) for s, k in zip(signs, ks)]
    uni_codes = [WeightCode(int(s), 1 << int(k)) for s, k in zip(signs, ks)]
    got_pot = mac_dot(emulation_config("pot4x8"), acts, pot_codes)
    got_uni = mac_dot(emulation_config("uniform4x8"), acts, uni_codes)
    assert got_pot == got_uni


def test_mac_dot_wrap_matches_wide_integer_oracle_mod_2_16():
    config = MacConfig("pot4x8", intermediate_width=18, accumulator_width=16,
                       overflow_mode="wrap")
    events = MacEvents()
    n = 2048
    acts = [127] * n
    codes = [WeightCode(1, 7)] * n  # every product is 127 << 7 = 16256
    got = mac_dot(config, acts, codes, events)
    true_sum = 127 * 128 * n
    want = ((true_sum + 2**15) % 2**16) - 2**15  # two's-complement reduction
    assert got == want
    assert events.accumulator > 0


def test_mac_dot_saturate_sticks_at_limit():
    config = MacConfig("uniform4x8", 12, 16, "saturate")
    acts = [127] * 100
    codes = [WeightCode(1, 7)] * 100
    got = mac_dot(config, acts, codes)
    assert got == 2**15 - 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(min_value=-128, max_value=127), min_size=1, max_size=64),
       st.randoms(use_true_random=False))
def test_wrap_accumulation_permutation_invariant(acts, rnd):
    config = MacConfig("pot4x8", 18, 12, "wrap")  # narrow accumulator wraps often
    codes = [WeightCode(1 if a % 2 else -1, a % 8) for a in acts]
    base = mac_dot(config, acts, codes)
    order = list(range(len(acts)))
    rnd.shuffle(order)
    assert mac_dot(config, [acts[i] for i in order], [codes[i] for i in order]) == base


def test_mac_dot_clean_run_counts_no_events():
    rng = np.random.default_rng(9)
    acts = rng.integers(-128, 128, size=200).tolist()
    codes = [WeightCode(int(s), int(k)) for s, k in
             zip(rng.choice([-1, 1], 200), rng.integers(0, 8, 200))]
    events = MacEvents()
    got = mac_dot(emulation_config("pot4x8"), acts, codes, events)
    assert events.total() == 0
    assert got == sum(a * decode_weight("pot4x8", c) for a, c in zip(acts, codes))


# ---------------------------------------------------------------------------
# static cost table
# ---------------------------------------------------------------------------

def test_cost_table_lut_ff_constants():
    assert (cost_report("uniform8x8").lut, cost_report("uniform8x8").ff) == (87, 39)
    assert (cost_report("uniform4x8").lut, cost_report("uniform4x8").ff) == (46, 27)
    assert (cost_report("apot4x8").lut, cost_report("apot4x8").ff) == (55, 49)
    assert (cost_report("pot4x8").lut, cost_report("pot4x8").ff) == (39, 25)


def test_cost_table_relative_power_and_area():
    assert cost_report("uniform8x8").rel_power == 1.0
    assert cost_report("uniform4x8").rel_power == 1 / 2.5
    assert cost_report("apot4x8").rel_power == 1 / 3
    assert cost_report("pot4x8").rel_power == pytest.approx(1 / 6)
    assert cost_report("pot4x8").rel_power == pytest.approx(0.167, abs=5e-4)
    assert cost_report("uniform8x8").rel_area == 1.0
    assert cost_report("uniform4x8").rel_area == 1 / 1.7
    assert cost_report("apot4x8").rel_area == 1 / 1.3
    assert cost_report("pot4x8").rel_area == 1 / 2


def test_cost_report_pure_and_stable():
    a = cost_report("pot4x8")
    b = cost_report("pot4x8")
    assert a == b
    assert [e.kind for e in cost_table()] == ["uniform8x8", "uniform4x8", "apot4x8", "pot4x8"]


def test_synthesis_widths():
    assert (synthesis_config("uniform8x8").intermediate_width,
            synthesis_config("uniform8x8").accumulator_width) == (16, 24)
    for kind in ("uniform4x8", "pot4x8", "apot4x8"):
        cfg = synthesis_config(kind)
        assert (cfg.intermediate_width, cfg.accumulator_width) == (12, 16)


def test_self_check_passes_and_covers_pot_space():
    ok, cases = mac_self_check()
    assert ok
    assert cases >= 4096  # 256 activations x 16 pot sign/shift codes, plus apot pairs
