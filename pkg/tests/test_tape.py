import numpy as np
import pytest

from _helpers import assert_grad_close, spd
from difflinalg import tape as tp
from difflinalg.errors import GraphError, ShapeError, UnboundLeafError, UnknownOpError
from difflinalg.gradcheck import finite_diff_grad
from difflinalg.tape import Graph


def quad_form_graph(a, y):
    g = Graph()
    A = g.leaf(a, name="A")
    Y = g.leaf(y, name="y")
    L = tp.potrf(A)
    loss = tp.sum(tp.square(tp.trsm(L, Y)))
    return g, A, Y, loss


def test_record_evaluates_eagerly():
    g = Graph()
    A = g.leaf(np.array([[4.0, 2.0], [2.0, 3.0]]))
    L = tp.potrf(A)
    np.testing.assert_allclose(L.value, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], rtol=1e-15)
    assert len(g.nodes) == 2


def test_deferred_leaf_then_forward():
    g = Graph()
    A = g.leaf(shape=(2, 2), name="A")
    L = tp.potrf(A)
    with pytest.raises(GraphError):
        L.value
    g.forward({"A": np.array([[9.0, 0.0], [0.0, 4.0]])})
    np.testing.assert_array_equal(L.value, [[3.0, 0.0], [0.0, 2.0]])


def test_chain_rule_two_by_two():
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    y = np.array([[1.0], [-2.0]])
    g, A, Y, loss = quad_form_graph(a, y)
    grads = g.backward(loss)
    L = np.linalg.cholesky(a)
    Li = np.linalg.inv(L)
    np.testing.assert_allclose(grads[Y], 2 * Li.T @ Li @ y, rtol=1e-14)
    ai = np.linalg.inv(a)
    np.testing.assert_allclose(grads[A], -ai @ y @ y.T @ ai, rtol=1e-13)
    np.testing.assert_allclose(loss.value, y.T @ ai @ y, rtol=1e-14)


def test_diamond_accumulates(rng):
    x = rng.standard_normal((3, 2))

    def build(xv):
        g = Graph()
        X = g.leaf(xv)
        P = tp.gemm2(X, X, tb=True)
        Q = tp.syrk(X)
        loss = tp.sum(P * Q + tp.exp(P))
        return g, X, loss

    g, X, loss = build(x)
    grad = g.backward(loss)[X]
    fd = finite_diff_grad(lambda z: float(build(z)[2].value[0, 0]), x)
    assert_grad_close(grad, fd)


def test_rebinding_and_repeat_backward(rng):
    g, A, Y, loss = quad_form_graph(spd(rng, 3), rng.standard_normal((3, 1)))
    first = g.backward(loss)[Y].copy()
    again = g.backward(loss)[Y]
    np.testing.assert_array_equal(first, again)
    a2 = spd(rng, 3)
    g.forward({A: a2})
    np.testing.assert_allclose(g.backward(loss)[Y], 2 * np.linalg.solve(a2, Y.value), rtol=1e-12)


def test_constants_get_no_gradient(rng):
    g = Graph()
    X = g.leaf(rng.standard_normal((2, 2)))
    C = g.constant(rng.standard_normal((2, 2)))
    loss = tp.sum(X @ C)
    grads = g.backward(loss)
    assert X in grads and C not in grads


def _planned_graph(rng):
    g = Graph()
    X = g.leaf(rng.standard_normal((4, 4)), name="X")
    W = g.leaf(rng.standard_normal((4, 2)), name="W")
    A = tp.add_jitter(tp.syrk(X), rel=0.5)
    L = tp.potrf(A)
    B = tp.gemm2(X, W)
    Z = tp.trsm(L, B)
    loss = tp.sum(tp.square(Z))
    return g, (X, W), (A, L, B, Z), loss


def test_plan_reuses_buffers(rng):
    g, _, (A, L, B, Z), loss = _planned_graph(rng)
    plan = g.plan_memory()
    assert plan.reuse[L.node] == A.key
    assert plan.reuse[Z.node] == B.key
    assert plan.peak_buffers <= plan.peak_buffers_without_reuse


def test_plan_lowers_peak_on_branches(rng):
    g = Graph()
    X = g.leaf(rng.standard_normal((3, 3)))
    P = -tp.syrk(X)
    Q = -(-tp.gemm2(X, X))
    loss = tp.sum(P + Q)
    plan = g.plan_memory()
    assert (plan.peak_buffers, plan.peak_buffers_without_reuse) == (3, 4)
    expect = g.backward(loss)[X].copy()
    g.forward(plan=plan)
    np.testing.assert_array_equal(g.backward(loss)[X], expect)


def test_plan_is_bit_identical(rng):
    seed = rng.integers(1 << 30)
    g1, leaves1, _, loss1 = _planned_graph(np.random.default_rng(seed))
    g2, leaves2, (A2, L2, B2, Z2), loss2 = _planned_graph(np.random.default_rng(seed))
    g1.forward()
    plan = g2.plan_memory()
    g2.forward(plan=plan)
    lbuf = L2.value
    assert lbuf is not None and g2._values[A2.node][0] is None
    np.testing.assert_array_equal(loss1.value, loss2.value)
    gr1, gr2 = g1.backward(loss1), g2.backward(loss2)
    for v1, v2 in zip(leaves1, leaves2):
        np.testing.assert_array_equal(gr1[v1], gr2[v2])


def test_plan_skips_retained_values(rng):
    g = Graph()
    X = g.leaf(spd(rng, 3))
    S = tp.syrk(X)  # not retained by potrf's backward
    L = tp.potrf(S)
    Li = tp.potri(L)  # L is retained by potri's backward
    plan = g.plan_memory()
    assert L.node in plan.reuse
    assert Li.node not in plan.reuse
    assert g.plan_memory(for_backward=False).reuse.get(Li.node) == L.key


def test_free_unused_keeps_backward_working(rng):
    g, leaves, _, loss = _planned_graph(rng)
    ref = [g.backward(loss)[v].copy() for v in leaves]
    g.forward(free_unused=True)
    for v, r in zip(leaves, ref):
        np.testing.assert_array_equal(g.backward(loss)[v], r)


def test_dump_lists_nodes():
    g = Graph()
    A = g.leaf(np.eye(2), name="A")
    tp.trsm(tp.potrf(A), A, transpose=True)
    text = g.dump()
    lines = text.splitlines()
    assert lines[0] == "%0 = leaf A : 2x2"
    assert lines[1] == "%1 = potrf[lower=True](%0) : 2x2"
    assert lines[2].startswith("%2 = trsm[alpha=1.0,lower=True,rightside=False,transpose=True](%1 %0)")


def test_multi_output_slots(rng):
    g = Graph()
    A = g.leaf(rng.standard_normal((2, 3)))
    Q, L = tp.gelqf(A)
    assert (Q.shape, L.shape) == ((2, 3), (2, 2))
    assert "%1.1" in g.dump() or L.slot == 1
    loss = tp.sum(tp.diag(L))
    grad = g.backward(loss)[A]
    assert grad.shape == (2, 3)


# -- errors ----------------------------------------------------------------------------

def test_non_scalar_loss():
    g = Graph()
    X = g.leaf(np.eye(2))
    with pytest.raises(ShapeError, match="1x1"):
        g.backward(tp.square(X))


def test_backward_before_forward():
    g = Graph()
    X = g.leaf(shape=(2, 2))
    loss = tp.sum(tp.square(X))
    with pytest.raises(GraphError, match="before forward"):
        g.backward(loss)


def test_unbound_leaf():
    g = Graph()
    X = g.leaf(shape=(2, 2), name="X")
    tp.square(X)
    with pytest.raises(UnboundLeafError, match="X"):
        g.forward()


def test_shape_mismatch_leaves_graph_unchanged():
    g = Graph()
    A = g.leaf(np.ones((2, 3)))
    B = g.leaf(np.ones((2, 3)))
    before = g.dump()
    with pytest.raises(ShapeError):
        tp.gemm2(A, B)
    with pytest.raises(ShapeError):
        tp.potrf(A)
    assert g.dump() == before


def test_unknown_op():
    g = Graph()
    A = g.leaf(np.eye(2))
    with pytest.raises(UnknownOpError):
        g.apply("getrf", [A])


def test_foreign_var():
    g1, g2 = Graph(), Graph()
    A = g1.leaf(np.eye(2))
    B = g2.leaf(np.eye(2))
    with pytest.raises(GraphError):
        tp.gemm2(A, B)


def test_rebind_wrong_shape():
    g = Graph()
    g.leaf(np.eye(2), name="A")
    with pytest.raises(ShapeError):
        g.forward({"A": np.eye(3)})
    with pytest.raises(GraphError):
        g.forward({"B": np.eye(2)})


def test_forward_error_names_node(rng):
    g = Graph()
    A = g.leaf(shape=(2, 2))
    tp.potrf(A)
    with pytest.raises(Exception, match="node 1 \\(potrf\\)"):
        g.forward({A: -np.eye(2)})


# -- elementwise and structural ops against finite differences -------------------------

UNARY = {
    "square": tp.square,
    "sqrt": tp.sqrt,
    "exp": tp.exp,
    "log": tp.log,
    "abs": tp.abs,
    "neg": lambda v: -v,
    "transpose": tp.transpose,
    "reshape": lambda v: tp.reshape(v, (1, 9)),
    "chol_param": tp.chol_param,
    "add_jitter": lambda v: tp.add_jitter(v, rel=0.1),
    "diag": tp.diag,
    "scalar_ops": lambda v: 2.0 - (v * 3.0 + 1.0) / 4.0,
    "rdiv": lambda v: 1.0 / v,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_fd(rng, name):
    x = rng.uniform(0.5, 2.0, size=(3, 3))
    w = rng.standard_normal(UNARY[name](Graph().leaf(x)).shape)

    def value(z):
        g = Graph()
        X = g.leaf(z)
        loss = tp.sum(UNARY[name](X) * g.constant(w))
        return g, X, loss

    g, X, loss = value(x)
    fd = finite_diff_grad(lambda z: float(value(z)[2].value[0, 0]), x)
    assert_grad_close(g.backward(loss)[X], fd)


BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "matmul": lambda a, b: a @ b.T,
    "concat": lambda a, b: tp.concat(a, b),
    "outer_add": lambda a, b: tp.outer_add(tp.reshape(a, (6, 1)), tp.reshape(b, (6, 1))),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_op_fd(rng, name):
    a = rng.uniform(0.5, 2.0, size=(2, 3))
    b = rng.uniform(0.5, 2.0, size=(2, 3))
    fn = BINARY[name]
    g0 = Graph()
    w = rng.standard_normal(fn(g0.leaf(a), g0.leaf(b)).shape)

    def build(av, bv):
        g = Graph()
        A, B = g.leaf(av), g.leaf(bv)
        return g, A, B, tp.sum(fn(A, B) * g.constant(w))

    g, A, B, loss = build(a, b)
    grads = g.backward(loss)
    assert_grad_close(grads[A], finite_diff_grad(lambda z: float(build(z, b)[3].value[0, 0]), a))
    assert_grad_close(grads[B], finite_diff_grad(lambda z: float(build(a, z)[3].value[0, 0]), b))


def test_same_leaf_used_twice(rng):
    g = Graph()
    x = rng.standard_normal((2, 2))
    X = g.leaf(x)
    loss = tp.sum(X * X)
    np.testing.assert_allclose(g.backward(loss)[X], 2 * x, rtol=1e-15)
