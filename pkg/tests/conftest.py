import hashlib

import pytest

from spacehsm.hsm import PrgState, bootstrap
from spacehsm.signing import SchemeId, generate_keypair


@pytest.fixture(scope="session")
def standin_keys():
    return generate_keypair(b"\x07" * 32, SchemeId.STANDIN)


@pytest.fixture(scope="session")
def rsa_keys():
    return generate_keypair(b"\x01" * 32, SchemeId.RSA2048)


@pytest.fixture
def initial_ratchet():
    return PrgState(hashlib.sha256(b"test ratchet").digest())


@pytest.fixture
def hsm(initial_ratchet):
    state, _ = bootstrap(b"\x05" * 32, initial_ratchet, scheme=SchemeId.STANDIN)
    return state


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion for the summary."""
    number = request.node.get_closest_marker("criterion").args[0]
    notes: list[str] = []
    yield notes
    failed = request.node.rep_call.failed if hasattr(request.node, "rep_call") else True
    ACCEPTANCE_RESULTS[number] = (not failed, "; ".join(notes))


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, note = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {note}")
