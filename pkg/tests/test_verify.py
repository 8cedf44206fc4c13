import pytest

from cptube.errors import ConfigError
from cptube.verify import SUITES, run_suite, verify_controller_monotonicity


def test_unknown_suite_rejected():
    with pytest.raises(ConfigError):
        run_suite("nope")


def test_suite_registry_names():
    assert set(SUITES) == {
        "conformal-bounds",
        "margin-soundness",
        "score-oracle",
        "jacobian",
        "plant-convergence",
        "controller-monotonicity",
    }


def test_controller_monotonicity_suite():
    report = verify_controller_monotonicity()
    assert report.passed, report.to_dict()
    names = [c["name"] for c in report.checks]
    assert "clearance-monotone-in-margin" in names
    assert "feasible-plans-respect-tube" in names


def test_report_shape():
    report = run_suite("plant-convergence")
    payload = report.to_dict()
    assert set(payload) == {"suite", "passed", "checks", "counterexample"}
    for check in payload["checks"]:
        assert set(check) == {"name", "passed", "detail"}
