import numpy as np
import pytest

from posbias import tkmodel

SMALL = dict(d=16, n_layers=2, n_heads=2, head_size=8, ff_dim=32)


@pytest.fixture
def small_config():
    return tkmodel.EncoderConfig(**SMALL)


@pytest.fixture
def small_params(small_config):
    return tkmodel.init_params(small_config, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not (rep.when == "setup" and rep.skipped)):
        return
    label = marker.args[0] if marker.args else item.name
    status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
    prev = _ACCEPTANCE.get(label)
    if prev in (None, "PASS") or status == "FAIL":
        _ACCEPTANCE[label] = status


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][2:])):
        terminalreporter.write_line(f"{_ACCEPTANCE[label]:<4} {label}")
