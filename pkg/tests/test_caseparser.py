import re

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from opfbench.caseparser import (
    RawCase,
    available_cases,
    case_fingerprint,
    case_text,
    load_case,
    parse_case,
    serialize_case,
)
from opfbench.errors import (
    DuplicateBusId,
    MalformedRow,
    MissingTable,
    NoSlackBus,
    UnsupportedCostModel,
)

from conftest import TWO_BUS, two_bus_text

GOLDEN_FP = {
    "case30": "698d1ca37660799649137130626ef83043e90947a6b88f94ca809682d377cd25",
    "case_ieee30": "f19225b62bb49206eb59a18f26b398d428c0ee7be01c5f0f305c96ee9c932158",
    "case9": "908c7d7ff63cf547e54c121610c7b598851cdc4f05c6eb3c6c9be00d9ae19d23",
    "case118": "e042eb9a116928513c412e8ca3a6743176c9685830765d7ef2fe11b633464d17",
}


def _count_rows(text, table):
    """Row counter that shares nothing with the parser: one data row per
    non-empty, non-comment line between ``mpc.<table> = [`` and ``];``."""
    block = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % table, text, re.S).group(1)
    n = 0
    for line in block.splitlines():
        line = line.split("%")[0].strip()
        if re.search(r"\d", line):
            n += 1
    return n


def test_minimal_two_bus_counts():
    raw = parse_case(TWO_BUS)
    assert raw.counts == (2, 1, 1, 1)
    assert raw.base_mva == 100.0
    assert raw.name == "twobus"


@pytest.mark.parametrize("name", ["case30", "case_ieee30"])
def test_case30_counts(name):
    raw = load_case(name)
    assert raw.counts[:3] == (30, 41, 6)


@pytest.mark.parametrize("name", ["case9", "case30", "case_ieee30", "case118"])
def test_row_counts_match_source_text(name):
    text = case_text(name)
    raw = parse_case(text)
    for table, n in zip(("bus", "branch", "gen", "gencost"), raw.counts):
        assert n == _count_rows(text, table), table


def test_missing_gencost_block():
    text = TWO_BUS[: TWO_BUS.index("mpc.gencost")]
    with pytest.raises(MissingTable) as ei:
        parse_case(text)
    assert ei.value.table == "gencost"


def test_missing_base_mva():
    with pytest.raises(MissingTable):
        parse_case(TWO_BUS.replace("mpc.baseMVA = 100;", ""))


def test_malformed_row_names_line():
    text = two_bus_text(**{"2\t1\t50\t20": "2\t1\t5x0\t20"})
    with pytest.raises(MalformedRow) as ei:
        parse_case(text)
    assert ei.value.table == "bus"
    assert ei.value.line == 7


def test_short_row_is_malformed():
    text = two_bus_text(**{"\t1\t250\t0;": "\t1\t250;"})
    with pytest.raises(MalformedRow) as ei:
        parse_case(text)
    assert ei.value.table == "gen"


def test_duplicate_bus_id():
    text = two_bus_text(**{"\t2\t1\t50": "\t1\t1\t50"})
    with pytest.raises(DuplicateBusId) as ei:
        parse_case(text)
    assert ei.value.line == 7


def test_no_slack_bus():
    text = two_bus_text(**{"\t1\t3\t0\t0": "\t1\t2\t0\t0"})
    with pytest.raises(NoSlackBus):
        parse_case(text)


def test_unknown_branch_endpoint():
    text = two_bus_text(**{"\t1\t2\t0.0384": "\t1\t7\t0.0384"})
    with pytest.raises(MalformedRow, match="unknown bus 7"):
        parse_case(text)


def test_piecewise_linear_cost_rejected():
    text = two_bus_text(**{"\t2\t0\t0\t3\t0.02": "\t1\t0\t0\t3\t0.02"})
    with pytest.raises(UnsupportedCostModel):
        parse_case(text)


def test_cubic_cost_rejected():
    text = two_bus_text(**{"\t2\t0\t0\t3\t0.02\t3\t0;": "\t2\t0\t0\t4\t1\t0.02\t3\t0;"})
    with pytest.raises(UnsupportedCostModel):
        parse_case(text)


def test_tap_zero_read_as_one():
    raw = parse_case(TWO_BUS)
    assert raw.branch[0, 8] == 1.0


def test_values_are_not_renormalised():
    raw = parse_case(TWO_BUS)
    assert raw.bus[1, 2] == 50.0
    assert raw.gen[0, 8] == 250.0
    assert raw.gencost[0, 4] == 0.02


def test_comments_whitespace_and_continuations():
    text = TWO_BUS.replace(
        "\t2\t1\t50\t20\t0\t0\t1\t1\t0\t135\t1\t1.1\t0.9;",
        "  2, 1, 50, 20, ... % split row\n   0 0 1 1 0   135 1 1.1 0.9 ; % trailing",
    )
    assert parse_case(text).same_as(parse_case(TWO_BUS))


def test_out_of_service_rows_are_kept():
    text = two_bus_text(**{"1\t100\t1\t250": "1\t100\t0\t250"})
    raw = parse_case(text)
    assert raw.counts == (2, 1, 1, 1)
    assert raw.gen[0, 7] == 0


def test_tables_read_only():
    raw = parse_case(TWO_BUS)
    with pytest.raises(ValueError):
        raw.bus[0, 2] = 1.0


def test_fingerprint_deterministic():
    assert case_fingerprint(parse_case(TWO_BUS)) == case_fingerprint(parse_case(TWO_BUS))


def test_fingerprint_sensitive():
    raw = parse_case(TWO_BUS)
    bus = raw.bus.copy()
    bus[1, 2] += 1e-9
    other = RawCase(raw.name, raw.base_mva, bus, raw.branch, raw.gen, raw.gencost)
    assert case_fingerprint(other) != case_fingerprint(raw)


@pytest.mark.parametrize("name", sorted(GOLDEN_FP))
def test_fingerprint_golden(name):
    assert case_fingerprint(load_case(name)) == GOLDEN_FP[name]


def test_shipped_cases():
    assert set(GOLDEN_FP) <= set(available_cases())


def test_load_case_unknown():
    with pytest.raises(FileNotFoundError):
        load_case("case_does_not_exist")


@pytest.mark.parametrize("name", ["case9", "case30", "case_ieee30", "case118"])
def test_round_trip_shipped(name):
    raw = load_case(name)
    back = parse_case(serialize_case(raw))
    assert back == raw
    assert case_fingerprint(back) == case_fingerprint(raw)


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


@given(st.lists(finite, min_size=9, max_size=9), st.lists(finite, min_size=9, max_size=9))
def test_round_trip_property(pd, branch_x):
    base = load_case("case9")
    bus = base.bus.copy()
    bus[:, 2] = pd
    br = base.branch.copy()
    br[:, 3] = branch_x
    raw = RawCase("prop", base.base_mva, bus, br, base.gen, base.gencost)
    back = parse_case(serialize_case(raw))
    assert back == raw
    np.testing.assert_array_equal(back.bus, raw.bus)
