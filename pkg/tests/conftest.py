import numpy as np
import pytest

from wmbench.core import ImageBuffer, derive_stream
from wmbench.diffusion.backend import load_backend
from wmbench.toydata import toy_set


@pytest.fixture(scope="session")
def backend():
    return load_backend("tiny")


@pytest.fixture(scope="session")
def toy64():
    return toy_set(8, 64, seed=11, prefix="t64")


@pytest.fixture(scope="session")
def toy128():
    return toy_set(4, 128, seed=12, prefix="t128")


def random_image(seed, h=32, w=32, key="img"):
    return ImageBuffer(derive_stream(seed, key).uniform(size=(h, w, 3)), source_id=f"r{seed}")


@pytest.fixture
def rand_img():
    return random_image


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n, status, detail in sorted(mod.RESULTS):
        terminalreporter.write_line(f"CRITERION {n} {status}: {detail}")
