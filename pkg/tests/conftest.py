import pytest

from deepacc.perception import Ensemble, SensorModel, build_ensemble, generate_training_set

# filled by tests/test_acceptance.py: criterion id -> list of (ok, detail)
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        parts = ACCEPTANCE[key]
        ok = all(p[0] for p in parts)
        detail = "; ".join(p[1] for p in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")


@pytest.fixture(scope="session")
def ensemble_dir(tmp_path_factory):
    """The default six-member ensemble, trained once per session and saved to disk."""
    sensor = SensorModel()
    data = generate_training_set(sensor, 20706, seed=sensor.seed)
    path = tmp_path_factory.mktemp("ensemble")
    Ensemble(build_ensemble(data), sensor).save(path)
    return path


@pytest.fixture(scope="session")
def ensemble(ensemble_dir):
    return Ensemble.load(ensemble_dir)
