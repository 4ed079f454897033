import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from nu_entangle.oscillation import Flavor, OscillationParams
from nu_entangle.qkd import (
    EveConfig,
    QkdConfig,
    eve_detectability,
    expected_same_flavor_rate,
    product_same_flavor_prob,
    run_protocol,
    same_flavor_zero_period,
)

# frozen from tests/oracles.py (matrix exponential propagation)
EVE_RATE_015 = 0.1236171859344382
EVE_RATE_045 = 0.29750158958499784
PRODUCT_SAME_EMU_01 = 0.12116934100792248
DETECTABILITY_03 = 0.29629629635786664


def _sigma3(p, n):
    return 3 * math.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize("seed", [0, 1, 7, 12345])
@pytest.mark.parametrize("t1,t2", [(0.15, 0.45), (0.0, 0.3), (0.2, 1.7)])
def test_no_eve_no_same_flavor_events(seed, t1, t2):
    rep = run_protocol(QkdConfig(t1, t2, n_pairs=50_000, seed=seed))
    assert rep.same_flavor_count == 0
    assert not rep.alarm
    assert sum(b.n_pairs for b in rep.baselines) == 50_000


def test_bits_are_complementary():
    rep = run_protocol(QkdConfig(0.15, 0.45, n_pairs=20_000, seed=3))
    assert rep.sifted_key_bits > 0
    assert np.array_equal(rep.alice_bits, 1 - rep.bob_bits)
    assert np.array_equal(rep.key, rep.alice_bits)
    assert 0.4 < rep.alice_bits.mean() < 0.6


def test_eve_rates_against_oracle():
    assert oracles.eve_rate(0.15, 0.05) == pytest.approx(EVE_RATE_015, abs=1e-12)
    assert expected_same_flavor_rate(0.15, 0.05) == pytest.approx(EVE_RATE_015, abs=1e-12)
    assert expected_same_flavor_rate(0.45, 0.05) == pytest.approx(EVE_RATE_045, abs=1e-12)
    np.testing.assert_allclose(expected_same_flavor_rate([0.15, 0.45], 0.05),
                               [EVE_RATE_015, EVE_RATE_045], atol=1e-12)
    with pytest.raises(ValueError):
        expected_same_flavor_rate(0.1, 0.2)


def test_eve_simulation_matches_expected_rates():
    rep = run_protocol(QkdConfig(0.15, 0.45, n_pairs=200_000, seed=21, eve=EveConfig(0.05)))
    assert rep.alarm
    for stats, rate in zip(rep.baselines, (EVE_RATE_015, EVE_RATE_045)):
        assert abs(stats.same_flavor_rate - rate) <= _sigma3(rate, stats.n_detected)


def test_efficiency_scaling():
    eta = 0.6
    full = run_protocol(QkdConfig(0.15, 0.45, n_pairs=200_000, seed=8, eve=EveConfig(0.05)))
    part = run_protocol(QkdConfig(0.15, 0.45, n_pairs=200_000, seed=8, eve=EveConfig(0.05),
                                  efficiency=eta))
    for b_full, b_part in zip(full.baselines, part.baselines):
        frac = b_part.n_detected / b_part.n_pairs
        assert abs(frac - eta ** 2) <= _sigma3(eta ** 2, b_part.n_pairs)
        # conditional rate unchanged up to statistics
        r = b_full.same_flavor_rate
        assert abs(b_part.same_flavor_rate - r) <= _sigma3(r, b_part.n_detected) + _sigma3(r, b_full.n_detected)
    assert part.n_undetected == 200_000 - sum(b.n_detected for b in part.baselines)


def test_zero_efficiency_detects_nothing():
    rep = run_protocol(QkdConfig(0.15, 0.45, n_pairs=1000, efficiency=0.0))
    assert rep.sifted_key_bits == 0 and rep.n_undetected == 1000
    assert all(b.same_flavor_rate is None for b in rep.baselines)


def test_config_validation():
    with pytest.raises(ValueError):
        QkdConfig(0.3, 0.3)
    with pytest.raises(ValueError):
        QkdConfig(0.1, 0.3, eve=EveConfig(0.1))
    with pytest.raises(ValueError):
        QkdConfig(0.1, 0.3, efficiency=1.5)
    with pytest.raises(ValueError):
        EveConfig(-1.0)


def test_product_same_flavor_values():
    assert product_same_flavor_prob(("e", "mu"), 0.0) == pytest.approx(0.0, abs=1e-15)
    assert product_same_flavor_prob(("e", "mu"), math.pi / 4) <= 1e-10
    assert product_same_flavor_prob(("e", "mu"), 0.1) == pytest.approx(PRODUCT_SAME_EMU_01, abs=1e-12)
    assert oracles.resent_same_flavor(0, 1, 0.1) == pytest.approx(PRODUCT_SAME_EMU_01, abs=1e-12)
    assert product_same_flavor_prob(("mu", "mu"), 0.0) == pytest.approx(1.0)


@given(st.floats(0.0, 2.0))
@settings(max_examples=100)
def test_product_same_flavor_matches_oracle(tau):
    for a in Flavor:
        for b in Flavor:
            assert product_same_flavor_prob((a, b), tau) == pytest.approx(
                oracles.resent_same_flavor(a, b, tau), abs=1e-10)


def test_zero_period():
    assert same_flavor_zero_period() == pytest.approx(math.pi / 4, abs=1e-12)
    # an irrational ratio of rates never repeats
    assert same_flavor_zero_period(OscillationParams(dm2_32=2.4e-3 * math.sqrt(2))) is None
    # 241 and 8 are commensurate with a longer common period
    assert same_flavor_zero_period(OscillationParams(dm2_32=2.41e-3)) == pytest.approx(2 * math.pi, abs=1e-9)


@pytest.mark.parametrize("k", [1, 2, 3, 7])
def test_product_same_flavor_vanishes_at_period_multiples(k):
    T = same_flavor_zero_period()
    for a in Flavor:
        for b in Flavor:
            if a != b:
                assert product_same_flavor_prob((a, b), k * T) <= 1e-9


def test_detectability():
    for spacing in (0.1, 0.2, 0.3):
        assert eve_detectability(spacing) > 0
    assert eve_detectability(0.3) == pytest.approx(DETECTABILITY_03, abs=1e-9)
    assert eve_detectability(math.pi / 4) <= 1e-12
    assert eve_detectability(1e-4) < 1e-3
    with pytest.raises(ValueError):
        eve_detectability(0.0)


def test_independent_of_worker_count():
    cfg = dict(t1=0.15, t2=0.45, n_pairs=200_000, seed=99, eve=EveConfig(0.05))
    a = run_protocol(QkdConfig(**cfg, workers=1))
    b = run_protocol(QkdConfig(**cfg, workers=4))
    assert np.array_equal(a.alice_bits, b.alice_bits)
    for x, y in zip(a.baselines, b.baselines):
        assert np.array_equal(x.coincidences, y.coincidences)


def test_seed_changes_outcomes():
    a = run_protocol(QkdConfig(0.15, 0.45, n_pairs=5000, seed=1))
    b = run_protocol(QkdConfig(0.15, 0.45, n_pairs=5000, seed=2))
    assert not np.array_equal(a.alice_bits, b.alice_bits) or a.sifted_key_bits != b.sifted_key_bits


def test_events_csv(tmp_path):
    rep = run_protocol(QkdConfig(0.15, 0.45, n_pairs=300, seed=5, efficiency=0.8, record_events=True))
    path = tmp_path / "events.csv"
    rep.write_events_csv(path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.DictReader(raw.decode().splitlines()))
    assert len(rows) == 300
    assert set(rows[0]) == {"pair_index", "baseline", "alice_flavor", "bob_flavor", "detected", "sifted_bit"}
    sifted = [int(r["sifted_bit"]) for r in rows if r["sifted_bit"] != ""]
    assert sifted == rep.alice_bits.tolist()
    with pytest.raises(ValueError):
        run_protocol(QkdConfig(0.15, 0.45, n_pairs=10)).write_events_csv(path)


def test_report_serialises():
    d = run_protocol(QkdConfig(0.15, 0.45, n_pairs=100, seed=1)).to_dict(include_bits=True)
    assert d["same_flavor_count"] == 0 and d["alarm"] is False
    assert len(d["alice_bits"]) == d["sifted_key_bits"]
    assert set(d["baselines"][0]["coincidences"]) == {f"{a}_{b}" for a in ("e", "mu", "tau")
                                                    for b in ("e", "mu", "tau")}
