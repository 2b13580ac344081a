import dataclasses
import math

import pytest

from cohscat.params import TWO_PI, derive_constants, paper_defaults

LAMBDA = 1064e-9


@pytest.fixture(scope="session")
def defaults():
    """Bundled reference config (measured mechanical frequencies)."""
    return paper_defaults()


@pytest.fixture(scope="session")
def derived(defaults):
    return derive_constants(defaults)


@pytest.fixture(scope="session")
def potential_config(defaults):
    """Reference config with mechanical frequencies taken from the trap potential."""
    return dataclasses.replace(defaults, mech_freq_override=(None, None, None))


def hz(w):
    return w / TWO_PI


def rel(a, b):
    return abs(a / b - 1.0)


def node():
    return LAMBDA / 4


__all__ = ["LAMBDA", "TWO_PI", "hz", "rel", "node", "math"]


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion.

    Call with the criterion number and a list of (label, ok, detail) checks;
    the line is printed immediately and repeated in the terminal summary.
    """
    def record(number, checks):
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{label}: {detail}{'' if good else ' [X]'}" for label, good, detail in checks)
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE].append(line)
        with capsys.disabled():
            print(f"\n{line}")
        failed = [f"{label} ({detail})" for label, good, detail in checks if not good]
        assert ok, "failed checks: " + ", ".join(failed)
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
