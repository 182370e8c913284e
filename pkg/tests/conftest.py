import pytest

from pacdosq.bastion.database import BastionConfig, db_setup
from pacdosq.pqc import SeededRandom, get_provider
from pacdosq.spectrum import GridConfig


@pytest.fixture(scope="session")
def provider():
    return get_provider("test-deterministic", 7)


@pytest.fixture(scope="session")
def sig_keys(provider):
    return provider.sig_keygen(SeededRandom("fixture-sig"))


@pytest.fixture(scope="session")
def small_db(provider, sig_keys):
    config = BastionConfig(GridConfig.for_rows(64, channels=4, slots=4), kappa=8)
    return db_setup(config, 1_700_000_000, (sig_keys.public_key, sig_keys.secret_key), SeededRandom("fixture-db"), provider)


_criteria: dict[int, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    num, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "FAIL"
    _criteria[num] = f"criterion {num:>2} {status}  {title}" + (f"  [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_criteria):
            terminalreporter.write_line(_criteria[num])
