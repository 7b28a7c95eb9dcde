import numpy as np
import pytest

from dsmatch.data import Dataset
from dsmatch.scores import CandidateModels, CandidateModelSpec

_ACCEPTANCE = {}


def random_dataset(rng, n, p=3, effect=1.0):
    """Smooth confounded design with a treated share around one half."""
    X = rng.normal(size=(n, p))
    X[:, -1] = rng.uniform(0, 2, size=n)
    lin = 0.6 * X[:, 0] - 0.4 * X[:, 1]
    A = (rng.uniform(size=n) < 1 / (1 + np.exp(-lin))).astype(int)
    # guarantee both arms are large enough for the sieve fits
    A[:8] = 1
    A[8:16] = 0
    Y = 1 + X @ np.linspace(1, -1, p) + 0.5 * X[:, 0] ** 2 + effect * A + rng.normal(size=n)
    return Dataset(X, A, Y)


def random_models(ds, J=1, K=1):
    ps_maps = ["raw", "first-order-plus-squares-of-numeric"][:J]
    pg_maps = ["raw", "first-order-plus-squares-of-numeric"][:K]
    return CandidateModels(ds, [CandidateModelSpec("propensity", m) for m in ps_maps],
                           [CandidateModelSpec("prognostic", m) for m in pg_maps])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_instance(rng):
    ds = random_dataset(rng, 150)
    models = random_models(ds)
    fits = models.fit()
    return ds, models, fits, models.scores(fits)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE[name] = status


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"{status}  {name}")
