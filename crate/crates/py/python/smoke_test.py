"""Smoke test for the sfc_sched_py extension. Run with pytest or plain python."""

import csv
import io
import math

import sfc_sched_py as sfc


def test_policies():
    assert sfc.policies() == ["fws", "lfff", "mfff", "lfdt", "mfdt"]


def test_link_delay_matches_closed_form():
    mu, lam = 3125.0, 1500.0
    rho = lam / mu
    expected = 1 / mu + rho / (2 * mu * (1 - rho))
    assert math.isclose(sfc.link_delay(lam, mu), expected, rel_tol=1e-12)


def test_unstable_link_raises():
    try:
        sfc.link_delay(10.0, 5.0)
    except ValueError:
        return
    raise AssertionError("expected ValueError")


def test_run_is_deterministic():
    s = sfc.Scenario()
    s.request_count = 80
    s.seed = 4
    a = sfc.run(s)
    b = sfc.run(s)
    assert a == b
    assert a["policy"] == "fws"
    assert a["completed"] + a["dropped"] == 80
    assert sfc.run(s, "mfdt")["policy"] == "mfdt"


def test_scenario_toml_round_trip():
    s = sfc.Scenario.from_toml('policy = "lfdt"\n[workload]\nrequest_count = 12\n')
    assert s.policy == "lfdt"
    assert s.request_count == 12
    back = sfc.Scenario.from_toml(s.to_toml())
    assert back.request_count == 12


def test_invalid_scenario_names_field():
    try:
        sfc.Scenario.from_toml("[workload]\nbackground_load_fraction = 1.2\n")
    except ValueError as e:
        assert "background_load_fraction" in str(e)
        return
    raise AssertionError("expected ValueError")


def test_sweep_rows_and_csv_agree():
    s = sfc.Scenario()
    s.configure_sweep(policies=["fws", "lfff"], demand_points=[20, 40], repetitions=1)
    rows = sfc.sweep(s, "demand")
    assert len(rows) == 2 * 2 * 4
    parsed = list(csv.DictReader(io.StringIO(sfc.sweep_csv(s, "demand"))))
    assert [float(r["mean"]) for r in parsed] == [r["mean"] for r in rows]


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_"):
            fn()
            print("ok", name)
