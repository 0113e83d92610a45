"""Headline acceptance criteria at desk scale.

Each test prints one ``criterion N [PASS|FAIL]`` line. Solved grids are
cached in ``.grid-cache`` (override with ``EPICTRL_TEST_CACHE``); a cold
run solves eleven grids and takes the better part of an hour on one core.
"""

import pytest

from epictrl.acceptance import AcceptanceRun


@pytest.fixture(scope="module")
def run(desk_config, grid_cache):
    return AcceptanceRun(desk_config, grid_cache)


def check(run, n, capsys):
    result = getattr(run, f"criterion_{n}")()
    with capsys.disabled():
        print("\n" + result.line())
        for note in result.notes:
            print(f"    {note}")
    assert result.passed, result.line()


def test_criterion_1_uncontrolled_baseline(run, capsys):
    check(run, 1, capsys)


def test_criterion_2_deterministic_final_size(run, capsys):
    check(run, 2, capsys)


def test_criterion_3_optimal_policy(run, capsys):
    check(run, 3, capsys)


def test_criterion_4_herd_immunity_crossing(run, capsys):
    check(run, 4, capsys)


def test_criterion_5_cap_sweep(run, capsys):
    check(run, 5, capsys)


def test_criterion_6_volatility_sweep(run, capsys):
    check(run, 6, capsys)


def test_criterion_7_property_suites(run, capsys):
    check(run, 7, capsys)
