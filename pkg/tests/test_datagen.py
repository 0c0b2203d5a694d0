import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from opfbench.caseparser import case_fingerprint, case_text, parse_case
from opfbench.datagen import (
    Dataset,
    generate_dataset,
    lhs_sample,
    load_external_csv,
    read_dataset,
    scale_loads,
    split_indices,
    write_dataset,
)
from opfbench.errors import CorruptFile, FingerprintMismatch, RetryBudgetExhausted, SchemaVersionMismatch
from opfbench.grid import build_network

from conftest import FIXTURES

# pinned once from lhs_sample(4, 2, seed=7)
LHS_GOLDEN = [
    [0.8250415712278063, 0.8137173969135312],
    [0.21838836134906547, 0.6112690764706616],
    [0.5013163261413937, 0.3761370647394883],
    [0.45530710459569157, 0.13837433801862312],
]


def test_lhs_two_strata():
    for seed in range(20):
        u = np.sort(lhs_sample(2, 1, seed)[:, 0])
        assert 0 <= u[0] < 0.5 <= u[1] < 1


@given(st.integers(1, 300), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_lhs_one_point_per_stratum(K, d, seed):
    u = lhs_sample(K, d, seed)
    assert u.shape == (K, d)
    assert np.all(u >= 0) and np.all(u < 1)
    for j in range(d):
        np.testing.assert_array_equal(np.sort(np.floor(u[:, j] * K).astype(int)), np.arange(K))


def test_lhs_golden_matrix():
    assert lhs_sample(4, 2, 7).tolist() == LHS_GOLDEN


def test_lhs_streams_differ():
    assert not np.array_equal(lhs_sample(10, 2, 7, stream=0), lhs_sample(10, 2, 7, stream=1))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lhs_marginals_uniform(seed):
    K = 400
    u = lhs_sample(K, 3, seed)
    for j in range(3):
        # finer bins than strata would be matched exactly; use 20 coarse bins and check within-bin offsets
        counts = np.bincount(np.floor(u[:, j] * 20).astype(int), minlength=20)
        assert chisquare(counts).pvalue > 0.01
        off = (u[:, j] * K) % 1.0
        assert chisquare(np.bincount(np.floor(off * 10).astype(int), minlength=10)).pvalue > 0.01


def test_lhs_rejects_empty():
    with pytest.raises(ValueError):
        lhs_sample(0, 2, 0)


def test_scaling_keeps_power_factor(ieee30):
    unit = lhs_sample(50, len(ieee30.load_buses), 4)
    pd, qd = scale_loads(ieee30, unit, 0.5)
    lb = ieee30.load_buses
    fac = 1.0 - 0.5 + 2.0 * 0.5 * unit
    # one factor per bus scales both P and Q
    np.testing.assert_array_equal(pd[:, lb], ieee30.pd[lb] * fac)
    np.testing.assert_array_equal(qd[:, lb], ieee30.qd[lb] * fac)
    assert np.all(fac >= 0.5) and np.all(fac < 1.5)
    zero = np.setdiff1d(np.arange(ieee30.n_buses), lb)
    assert np.all(pd[:, zero] == 0) and np.all(qd[:, zero] == 0)


def test_independent_pq_scaling(ieee30):
    d = 2 * len(ieee30.load_buses)
    pd, qd = scale_loads(ieee30, lhs_sample(20, d, 1), 0.5, independent_pq=True)
    lb = ieee30.load_buses
    both = ieee30.qd[lb] != 0
    assert not np.allclose((pd[:, lb] / ieee30.pd[lb])[:, both], (qd[:, lb] / ieee30.qd[lb])[:, both])


@given(st.integers(1, 5000), st.integers(0, 1000))
def test_split_sizes(K, seed):
    s = split_indices(K, seed)
    assert len(s["train"]) == int(np.floor(0.6 * K))
    assert len(s["val"]) == int(np.floor(0.15 * K))
    allidx = np.concatenate([s["train"], s["val"], s["test"]])
    np.testing.assert_array_equal(np.sort(allidx), np.arange(K))


def test_dataset_invariants(small_ds, ieee30):
    assert len(small_ds) == 60
    assert small_ds.manifest["case_fingerprint"] == ieee30.fingerprint
    assert small_ds.manifest["discarded"] == small_ds.manifest["draws"] - 60
    assert small_ds.vm.shape == (60, 30) and small_ds.pg.shape == (60, 6)
    s = small_ds.splits
    assert sum(len(v) for v in s.values()) == 60


def test_variation_zero_gives_nominal(ieee30):
    from opfbench.acopf import solve_acopf
    from opfbench.powerflow import LoadScenario

    ds = generate_dataset(ieee30, 4, variation=0.0, seed=0, threads=1)
    nom = solve_acopf(ieee30, LoadScenario.nominal(ieee30))
    assert np.all(ds.pd == ieee30.pd) and np.all(ds.qd == ieee30.qd)
    assert np.all(ds.vm.var(axis=0) == 0) and np.all(ds.va.var(axis=0) == 0)
    # samples are warm-started from the nominal optimum, so they equal that re-solve exactly
    again = solve_acopf(ieee30, LoadScenario.nominal(ieee30), start=nom)
    np.testing.assert_array_equal(ds.vm[0], again.state.vm)
    assert ds.objective[0] == pytest.approx(nom.objective, rel=1e-7)


def test_generation_deterministic_and_thread_independent(ieee30):
    a = generate_dataset(ieee30, 40, seed=11, threads=1)
    b = generate_dataset(ieee30, 40, seed=11, threads=1)
    c = generate_dataset(ieee30, 40, seed=11, threads=3)
    assert a.same_as(b) and a.same_as(c)
    assert a.manifest == c.manifest


def test_retry_budget(ieee30):
    # factors in [-1.5, 3.5] leave most scenarios without an AC solution
    with pytest.raises(RetryBudgetExhausted) as ei:
        generate_dataset(ieee30, 6, variation=2.5, seed=0, threads=1, retry_factor=1)
    assert ei.value.attempted == 6
    assert ei.value.converged < 6


def test_round_trip(tmp_path, small_ds, ieee30):
    ds = replace(small_ds, case_text=case_text("case_ieee30"))
    write_dataset(ds, tmp_path / "d")
    back = read_dataset(tmp_path / "d", ieee30)
    assert back.same_as(ds)
    assert back.manifest == ds.manifest
    assert back.get_network().fingerprint == ieee30.fingerprint


def test_network_rebuilt_from_stored_case(tmp_path, small_ds):
    ds = replace(small_ds, case_text=case_text("case_ieee30"))
    write_dataset(ds, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    assert back.get_network().fingerprint == ds.fingerprint


@pytest.fixture
def written(tmp_path, small_ds):
    return write_dataset(small_ds, tmp_path / "d")


def test_truncated_samples(written):
    p = written / "samples.csv"
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(CorruptFile):
        read_dataset(written)


def test_truncated_without_checksum(written):
    man = json.loads((written / "manifest.json").read_text())
    del man["samples_sha256"]
    (written / "manifest.json").write_text(json.dumps(man))
    p = written / "samples.csv"
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(CorruptFile, match="fields"):
        read_dataset(written)


def test_missing_samples(written):
    (written / "samples.csv").unlink()
    with pytest.raises(CorruptFile):
        read_dataset(written)


def test_bad_manifest_json(written):
    (written / "manifest.json").write_text("{not json")
    with pytest.raises(CorruptFile):
        read_dataset(written)


def test_schema_version(written):
    man = json.loads((written / "manifest.json").read_text())
    man["schema_version"] = 99
    (written / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(SchemaVersionMismatch):
        read_dataset(written)


def test_fingerprint_mismatch(written, case30):
    with pytest.raises(FingerprintMismatch):
        read_dataset(written, case30)


def test_overlapping_splits_rejected(written):
    man = json.loads((written / "manifest.json").read_text())
    man["splits"]["val"] = man["splits"]["train"][:3]
    (written / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(CorruptFile, match="disjoint"):
        read_dataset(written)


def _two_bus_net():
    return build_network(parse_case((FIXTURES / "two_bus.m").read_text()))


def test_external_csv_fixture():
    net = _two_bus_net()
    ds = load_external_csv(FIXTURES / "external_two_bus.csv", FIXTURES / "external_two_bus_splits.json", net)
    assert len(ds) == 3
    np.testing.assert_array_equal(ds.splits["train"], [0, 2])
    np.testing.assert_array_equal(ds.test.pd[0], [0, 0.5])
    assert ds.objective[2] == 320.4347904
    assert ds.manifest["sampler"] == "external"
    assert ds.fingerprint == case_fingerprint(parse_case((FIXTURES / "two_bus.m").read_text()))


def test_external_csv_bad_header(tmp_path):
    net = _two_bus_net()
    text = (FIXTURES / "external_two_bus.csv").read_text().replace("vm_0", "v_0")
    (tmp_path / "s.csv").write_text(text)
    with pytest.raises(CorruptFile, match="header"):
        load_external_csv(tmp_path / "s.csv", FIXTURES / "external_two_bus_splits.json", net)


def test_external_csv_wrong_case(ieee30):
    with pytest.raises(FingerprintMismatch):
        load_external_csv(FIXTURES / "external_two_bus.csv", FIXTURES / "external_two_bus_splits.json", ieee30)


def test_external_csv_non_numeric(tmp_path):
    net = _two_bus_net()
    text = (FIXTURES / "external_two_bus.csv").read_text().replace("0.3035308204", "abc")
    (tmp_path / "s.csv").write_text(text)
    with pytest.raises(CorruptFile, match="non-numeric"):
        load_external_csv(tmp_path / "s.csv", FIXTURES / "external_two_bus_splits.json", net)


def test_dataset_subset_views(small_ds):
    tr = small_ds.train
    assert isinstance(tr, Dataset)
    np.testing.assert_array_equal(tr.vm, small_ds.vm[small_ds.splits["train"]])
