"""All acceptance criteria at their stated tolerances, one pass/fail line each.

The lines are collected and printed in the terminal summary under
"acceptance criteria".
"""
import pytest

from toricenv.acceptance import CRITERIA, apply_runtime_limit, run_criterion

SLOW = {16}


@pytest.mark.parametrize("number", [
    pytest.param(i, marks=pytest.mark.slow) if i in SLOW else i for i in sorted(CRITERIA)
])
def test_criterion(number, record_line):
    res = apply_runtime_limit(run_criterion(number))
    line = res.line()
    record_line(line)
    print(line)
    assert res.passed, line
