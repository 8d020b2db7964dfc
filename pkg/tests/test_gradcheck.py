import json

import numpy as np
import pytest

from difflinalg import gradcheck as gc
from difflinalg.dense import ToleranceConfig
from difflinalg.errors import CoverageError, ResampleError
from difflinalg.tape.ops import LINALG_OPS, get_op


def test_oracle_square():
    np.testing.assert_allclose(gc.finite_diff_grad(lambda x: float(x) ** 2, 3.0), 6.0, rtol=1e-9)


def test_oracle_trace(rng):
    X = rng.standard_normal((3, 3))
    np.testing.assert_allclose(gc.finite_diff_grad(np.trace, X), np.eye(3), atol=1e-9)


def test_oracle_exact_on_cubics(rng):
    # central differences are exact for cubics up to roundoff
    c = rng.standard_normal(4)
    f = lambda x: c[0] + c[1] * x + c[2] * x ** 2 + c[3] * x ** 3  # noqa: E731
    for x in (-1.3, 0.0, 2.1):
        g = gc.finite_diff_grad(lambda z: f(float(z)), x, h=1e-4)
        expect = c[1] + 2 * c[2] * x + 3 * c[3] * x ** 2
        assert abs(float(g) - expect) <= 1e-9 + 1e-4 ** 2 * abs(c[3])


def test_oracle_symmetric_constraint(rng):
    W = rng.standard_normal((3, 3))
    G = gc.finite_diff_grad(lambda X: float(np.sum(W * X)), np.eye(3), constraint="symmetric")
    np.testing.assert_allclose(G, (W + W.T) / 2, atol=1e-9)
    with pytest.raises(ValueError):
        gc.finite_diff_grad(np.sum, np.ones((2, 3)), constraint="symmetric")
    with pytest.raises(ValueError):
        gc.finite_diff_grad(np.sum, np.ones((2, 2)), h=0.0)


def test_oracle_reports_coordinate():
    def f(X):
        if X[1, 0] < 0:
            raise FloatingPointError("negative")
        return float(X.sum())

    with pytest.raises(FloatingPointError) as info:
        gc.finite_diff_grad(f, np.zeros((2, 2)))
    assert info.value.coordinate == (1, 0)
    assert "(1, 0)" in str(info.value)


def test_every_operator_is_covered():
    assert gc.missing_coverage() == []
    assert set(gc.DESCRIPTORS) == set(LINALG_OPS)
    assert gc.combo_count() == 29


def test_coverage_error(monkeypatch):
    reduced = {k: v for k, v in gc.DESCRIPTORS.items() if k != "potri"}
    monkeypatch.setattr(gc, "DESCRIPTORS", reduced)
    with pytest.raises(CoverageError, match="potri"):
        gc.run_suite(ops=["potrf"], shapes=(2,), trials=1)
    with pytest.raises(CoverageError):
        gc.check_operator("potri")


@pytest.mark.parametrize("name", LINALG_OPS)
def test_small_check_passes(lapack, name):
    reports = gc.check_operator(name, shapes=(2, 4), trials=2)
    assert len(reports) == 2 * len(gc.DESCRIPTORS[name].flag_combos)
    assert all(r.passed for r in reports), [r.line() for r in reports if not r.passed]


def _corrupted_backward(op_name):
    op = get_op(op_name)

    def backward(cots, ins, outs, ctx, overwrite):
        grads = list(op.backward(cots, ins, outs, ctx, overwrite))
        grads[0] = -grads[0]
        return grads

    return backward


@pytest.mark.parametrize("name", ["potrf", "trsm", "syevd"])
def test_corrupted_backward_is_caught(lapack, name):
    reports = gc.check_operator(name, shapes=(3,), trials=3, combos=[0], backward=_corrupted_backward(name))
    (rep,) = reports
    assert not rep.passed
    assert rep.max_rel > 1.0
    desc = gc.DESCRIPTORS[name]
    cfg = ToleranceConfig()
    _, _, ok = gc._check_once(desc, desc.flag_combos[0], 3, rep.seed, cfg, np.float64, _corrupted_backward(name))
    assert not ok
    assert f"seed={rep.seed}" in rep.line() and rep.line().startswith("FAIL")


def test_reports_are_deterministic(lapack):
    a = gc.check_operator("gelqf", shapes=(3,), trials=2, seed=5)
    b = gc.check_operator("gelqf", shapes=(3,), trials=2, seed=5)
    assert [r.record() for r in a] == [r.record() for r in b]
    c = gc.check_operator("gelqf", shapes=(3,), trials=2, seed=6)
    assert a[0].seed != c[0].seed


def test_resample_contract():
    cfg = ToleranceConfig(min_gap_resample=10.0)
    with pytest.raises(ResampleError):
        gc.check_operator("syevd", shapes=(8,), trials=1, cfg=cfg)
    with pytest.raises(ResampleError):
        gc.check_operator("gesvd", shapes=(8,), trials=1, cfg=cfg)


def test_single_precision_check(lapack):
    reports = gc.run_suite(ops=["potrf", "gemm2"], shapes=(3,), trials=2, precision="single")
    assert all(r.passed for r in reports)


def test_format_reports(lapack):
    reports = gc.check_operator("syrk", shapes=(2,), trials=1)
    lines = gc.format_reports(reports, "json").splitlines()
    rec = json.loads(lines[0])
    assert {"op", "flags", "shape", "max_rel_err", "pass", "seed"} <= set(rec)
    assert rec["op"] == "syrk" and rec["pass"] is True
    assert gc.format_reports(reports).splitlines()[0].startswith("PASS syrk")
