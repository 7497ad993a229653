import pytest

from mfpof.experiment import ExperimentConfig


def tiny_config(**kw):
    base = dict(levels=(1.0, 0.5, 0.1), design_sizes=(12, 6, 3), maximin_iterations=200, t_ref=0.1,
                amh={"p": 12, "burn_in": 60, "thin": 3, "adaptation_start": 30}, map_restarts=1,
                pof={"m_inputs": 25, "q_paths": 3}, replications=2, reference_value=0.05,
                interval_levels=(0.5, 0.9, 0.95))
    base.update(kw)
    return ExperimentConfig.from_dict(base)


@pytest.fixture
def tiny():
    return tiny_config()


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[name] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        outcome, detail = _ACCEPTANCE[name]
        num = int(name.split("_")[2])
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {num:2d} {status}: {name[len('test_criterion_00_'):]}"
                                    + (f" ({detail})" if detail else ""))
