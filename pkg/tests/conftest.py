import random

import pytest

from swarmmsg.crypto import FastCrypto, RealCrypto


def seeded(provider, seed: int = 7):
    return provider(random_bytes=random.Random(seed).randbytes)


@pytest.fixture
def crypto():
    return seeded(RealCrypto)


@pytest.fixture(params=[RealCrypto, FastCrypto], ids=["real", "fast"])
def any_crypto(request):
    return seeded(request.param)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
