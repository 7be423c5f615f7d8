from __future__ import annotations

import numpy as np
import pytest

from lolnmpc import selftest
from lolnmpc.selftest import CHECKS, CheckResult, run_selftest


@pytest.mark.parametrize("name", [n for n in CHECKS if n != "model_match_rmse"])
def test_fast_checks_pass(params, name):
    (res,) = run_selftest(params, only=[name])
    assert res.passed, res.line()


def test_rk4_order_near_four(params):
    res = selftest.check_rk4_order(params)
    assert res.value == pytest.approx(4.0, abs=0.3)


def test_crashing_check_is_reported(params, monkeypatch):
    def boom(params):
        raise RuntimeError("kaput")

    monkeypatch.setitem(CHECKS, "hover_trim", boom)
    (res,) = run_selftest(params, only=["hover_trim"])
    assert not res.passed
    assert "RuntimeError: kaput" in res.line()


def test_result_line_format():
    line = CheckResult("demo", True, 1.5e-3, "< 1e-2", 0.25, "note").line()
    assert line.startswith("[PASS] demo")
    assert "1.500e-03" in line and "(note)" in line and "0.25s" in line


def test_model_match_reference_is_consistent(params):
    ref = selftest.model_match_reference(params, duration=1.0, lookahead=0.5)
    assert ref.duration == pytest.approx(1.0)
    np.testing.assert_allclose(np.linalg.norm(ref.sample(ref.t)["q"], axis=1), 1.0, atol=1e-9)
