"""Shared test plumbing.

* Every ``decompose`` call made anywhere in the suite is followed by
  ``audit_structure``; a malformed program fails the calling test.
* The acceptance module runs last so its structural-audit criterion sees
  every decomposition built by the rest of the suite.
* Acceptance results are repeated in the terminal summary, one line each.
"""

import functools

import pytest

import stlccp.bench.cli
import stlccp.ccp
import stlccp.decomposition as decomposition

AUDIT = {"programs": 0, "problems": []}
ACCEPTANCE = []

_decompose = decomposition.decompose


@functools.wraps(_decompose)
def _audited_decompose(*args, **kwargs):
    prog = _decompose(*args, **kwargs)
    AUDIT["programs"] += 1
    problems = decomposition.audit_structure(prog)
    if problems:
        AUDIT["problems"].extend(problems)
        raise AssertionError(f"structural audit failed: {problems}")
    return prog


for _mod in (decomposition, stlccp.ccp, stlccp.bench.cli):
    _mod.decompose = _audited_decompose


def record(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


@pytest.fixture
def acceptance():
    return record


def pytest_collection_modifyitems(items):
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
