"""Acceptance criteria 1-12 at their stated tolerances.

Each criterion runs once per session; every test prints one PASS/FAIL line.
Two checks of criterion 11 require a tube mass the Brownian bridge does not
have (see the ledger); they are strict xfails so a silent change is noticed.
"""

import os
from functools import lru_cache

import pytest

from pinsupport.acceptance import _plain, run_criterion

SEED = 42
WORKERS = min(4, os.cpu_count() or 1)


@lru_cache(maxsize=None)
def result(i):
    return run_criterion(i, SEED, WORKERS)


def _report(capsys, res, checks=None):
    checks = res.checks if checks is None else checks
    with capsys.disabled():
        print()
        print(res.line())
        for c in checks:
            print(f"    {'ok  ' if c.passed else 'FAIL'} {c.name}: {_plain(c.value)} (want {c.threshold})")


def _check(res, name):
    found = [c for c in res.checks if c.name == name]
    assert len(found) == 1, name
    return found[0]


@pytest.mark.parametrize("i", [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12])
def test_criterion(i, capsys):
    res = result(i)
    _report(capsys, res)
    assert res.passed, [c.name for c in res.checks if not c.passed]
    assert res.seconds <= res.budget_s


def test_criterion_11_tube_mass_matches_oracle(capsys):
    res = result(11)
    _report(capsys, res)
    c = _check(res, "tube mass at eta = 0.5 vs boundary-crossing oracle")
    assert c.passed, c.value
    assert res.seconds <= res.budget_s


def test_criterion_11_degenerate_admissible_set_empty():
    assert _check(result(11), "degenerate system admissible set").passed


UNATTAINABLE = "P(sup |bridge| < eta) is the Kolmogorov distribution function, 0.036 at eta = 0.5"


@pytest.mark.xfail(strict=True, reason=UNATTAINABLE)
def test_criterion_11_tube_mass_at_least_0_9():
    assert _check(result(11), "tube mass at eta = 0.5").passed


@pytest.mark.xfail(strict=True, reason=UNATTAINABLE)
def test_criterion_11_small_tube_lower_bound_positive():
    assert _check(result(11), "99% lower bound of tube mass at eta = 0.1").passed
