import json

import pytest

import onlinedefer.hypothesis as hyp
from onlinedefer import verify


@pytest.mark.parametrize("name", list(verify.SUITES))
def test_quick_suite_passes(name):
    (res,) = verify.run_suites([name], quick=True)
    assert res.passed, res.failures[:3]
    assert res.checks > 0


def test_report_json_shape():
    results = verify.run_suites(["bridge_pinning"], quick=True)
    rep = json.loads(verify.report_json(results))
    assert rep["passed"] is True
    assert rep["suites"][0]["name"] == "bridge_pinning" and rep["suites"][0]["failures"] == []


def test_broken_projection_is_caught(monkeypatch):
    original = hyp.project_zero_sum

    def sign_flipped(W, experts):
        P = original(W, experts)
        # add the mean back instead of removing it
        return W.with_data(2 * W.data - P.data)

    monkeypatch.setattr(hyp, "project_zero_sum", sign_flipped)
    res = verify.suite_projection(cases=200)
    assert not res.passed
    assert any(f.prop == "zero_column_sums" for f in res.failures)
    assert all(isinstance(f.seed, int) for f in res.failures)
