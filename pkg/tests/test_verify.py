from __future__ import annotations

import pytest

from oclab.errors import ConfigError
from oclab.verify import CHECKS, run_suite


def test_registry_order():
    assert list(CHECKS) == [
        "imin_closed_form",
        "imin_shape",
        "inverse_consistency",
        "lp_ot_bridge",
        "type_kl_sequence",
        "type_uniformity",
        "marton_bound",
        "converse",
        "pinsker",
    ]


def test_selected_checks_pass():
    report = run_suite(["pinsker", "lp_ot_bridge", "type_kl_sequence", "imin_closed_form"])
    assert report.passed
    assert [o.name for o in report.outcomes] == ["imin_closed_form", "lp_ot_bridge", "type_kl_sequence", "pinsker"]
    assert report.failures() == []


def test_broken_tolerance_is_reported():
    report = run_suite(["pinsker", "type_kl_sequence"], tolerances={"pinsker": -1.0})
    assert not report.passed
    assert report.failures() == ["pinsker"]
    pinsker = report.outcomes[1]
    assert pinsker.tolerance == -1.0 and pinsker.value > -1.0


def test_empty_selection_passes():
    report = run_suite([])
    assert report.passed
    assert report.outcomes == []


def test_unknown_names_are_rejected():
    with pytest.raises(ConfigError):
        run_suite(["no_such_check"])
    with pytest.raises(ConfigError):
        run_suite(["pinsker"], tolerances={"no_such_check": 1.0})


def test_report_serialization():
    report = run_suite(["pinsker"])
    assert report.to_rows()[0][:2] == ["pinsker", True]
    payload = report.to_dict()
    assert payload["passed"] is True
    assert payload["checks"][0]["name"] == "pinsker"


def test_same_seed_same_value():
    first = run_suite(["pinsker"], seed=1).outcomes[0]
    again = run_suite(["pinsker"], seed=1).outcomes[0]
    assert first.value == again.value


def test_default_suite_passes():
    report = run_suite()
    assert report.passed, report.failures()
    assert len(report.outcomes) == len(CHECKS)


def test_sequential_coupling_check_covers_long_blocks():
    outcome = run_suite(["marton_bound"]).outcomes[0]
    assert outcome.passed
    assert outcome.value <= outcome.tolerance
