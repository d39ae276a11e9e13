import math

import numpy as np
import pytest

from deskgrasp import diffcore as dc
from deskgrasp.diffcore import Parameter, Tape, finite_difference_check
from deskgrasp.errors import DoubleBackward, NonScalarRoot, ShapeMismatch


class TestForward:
    def test_add_vectors(self):
        t = Tape()
        out = dc.add(t.const([1.0, 2.0]), t.const([3.0, 4.0]))
        assert np.array_equal(out.value, [4.0, 6.0])

    def test_sigmoid_symmetry_point(self):
        t = Tape()
        assert dc.sigmoid(t.const(0.0)).item() == 0.5

    def test_matmul_ones(self):
        t = Tape()
        out = dc.matmul(t.const(np.ones((1, 2))), t.const(np.ones((2, 1))))
        assert np.array_equal(out.value, [[2.0]])

    def test_shape_mismatch_reports_shapes(self):
        t = Tape()
        with pytest.raises(ShapeMismatch, match=r"\(2,\).*\(3,\)"):
            dc.add(t.const([1.0, 2.0]), t.const([1.0, 2.0, 3.0]))
        with pytest.raises(ShapeMismatch):
            dc.matmul(t.const(np.ones((2, 3))), t.const(np.ones((2, 3))))

    def test_rank3_rejected(self):
        with pytest.raises(ShapeMismatch):
            Tape().const(np.ones((2, 2, 2)))


class TestBackward:
    def test_square_power_rule(self):
        t = Tape()
        p = Parameter("x", 3.0)
        x = t.param(p)
        grads = t.backward(dc.mul(x, x))
        assert grads[p] == pytest.approx(6.0, abs=1e-15)

    def test_sum_sigmoid_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        w = Parameter("w", rng.normal(size=(2, 5)))
        p = Parameter("p", rng.normal(size=(5, 3)))
        f = lambda tape: dc.vsum(dc.sigmoid(dc.matmul(tape.param(w), tape.param(p))))
        assert finite_difference_check(f, [w, p], step=1e-6) <= 1e-6

    def test_max_routes_to_argmax(self):
        t = Tape()
        p = Parameter("x", [1.0, 5.0, 2.0])
        grads = t.backward(dc.vmax(t.param(p)))
        assert np.array_equal(grads[p], [0.0, 1.0, 0.0])

    def test_max_tie_routes_to_first(self):
        t = Tape()
        p = Parameter("x", [5.0, 5.0, 2.0])
        grads = t.backward(dc.vmax(t.param(p)))
        assert np.array_equal(grads[p], [1.0, 0.0, 0.0])

    def test_non_scalar_root_rejected(self):
        t = Tape()
        with pytest.raises(NonScalarRoot):
            t.backward(t.const([1.0, 2.0]))

    def test_double_backward_detected(self):
        t = Tape()
        p = Parameter("x", 2.0)
        root = dc.mul(t.param(p), t.param(p))
        t.backward(root)
        with pytest.raises(DoubleBackward):
            t.backward(root)
        t.reset_adjoints()
        assert t.backward(root)[p] == pytest.approx(4.0)

    def test_gradient_linearity(self):
        rng = np.random.default_rng(3)
        p = Parameter("x", rng.normal(size=(4,)))
        a, b = 2.5, -1.25

        def fg(tape):
            x = tape.param(p)
            f = dc.vsum(dc.mul(x, x))
            g = dc.vsum(dc.exp(dc.mul(x, 0.1)))
            return f, g

        t1 = Tape()
        f, _ = fg(t1)
        gf = t1.backward(f)[p]
        t2 = Tape()
        _, g = fg(t2)
        gg = t2.backward(g)[p]
        t3 = Tape()
        f3, g3 = fg(t3)
        combo = dc.add(dc.mul(f3, a), dc.mul(g3, b))
        gc = t3.backward(combo)[p]
        assert np.abs(gc - (a * gf + b * gg)).max() <= 1e-12

    def test_param_reused_accumulates_once_per_leaf(self):
        t = Tape()
        p = Parameter("x", 3.0)
        x1, x2 = t.param(p), t.param(p)
        assert x1 is x2
        grads = t.backward(dc.add(x1, dc.mul(x2, x2)))
        assert grads[p] == pytest.approx(7.0)


def _interior(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, shape)


PRIMITIVE_CASES = [
    ("add", lambda t, a, b: dc.add(a, b), 2),
    ("sub", lambda t, a, b: dc.sub(a, b), 2),
    ("mul", lambda t, a, b: dc.mul(a, b), 2),
    ("div", lambda t, a, b: dc.div(a, dc.add(dc.mul(b, b), 1.0)), 2),
    ("matmul", None, 2),
    ("relu", lambda t, a: dc.relu(a), 1),
    ("sigmoid", lambda t, a: dc.sigmoid(a), 1),
    ("exp", lambda t, a: dc.exp(a), 1),
    ("log", lambda t, a: dc.log(dc.add(dc.mul(a, a), 0.5)), 1),
    ("sqrt", lambda t, a: dc.sqrt(dc.add(dc.mul(a, a), 0.5)), 1),
    ("sin", lambda t, a: dc.sin(a), 1),
    ("cos", lambda t, a: dc.cos(a), 1),
    ("arccos", lambda t, a: dc.arccos(dc.mul(dc.sigmoid(a), 0.9)), 1),
    ("clamp", lambda t, a: dc.clamp(a, -0.5, 0.5), 1),
    ("mean", lambda t, a: dc.vmean(dc.mul(a, a), axis=1), 1),
    ("min", lambda t, a: dc.vmin(a, axis=0), 1),
    ("max", lambda t, a: dc.vmax(a, axis=1), 1),
    ("transpose", lambda t, a: dc.transpose(a), 1),
    ("reshape", lambda t, a: dc.reshape(a, (1, a.value.size)), 1),
    ("concat", lambda t, a, b: dc.concat([a, b], axis=1), 2),
    ("gather", lambda t, a: dc.gather(a, [2, 0, 2], axis=0), 1),
    ("gather_cols", lambda t, a: dc.gather(a, [3, 1], axis=1), 1),
    ("take_per_row", lambda t, a: dc.take_per_row(a, [[0, 2], [3, 3], [1, 0]]), 1),
    ("scale_rows", None, 2),
    ("group_max", lambda t, a: dc.group_max(a, [[0, 1], [2, 2]]), 1),
]


@pytest.mark.parametrize("name,build,arity", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(name, build, arity):
    # 100 random inputs per op, constructed away from kinks/ties
    rng = np.random.default_rng(hash(name) % 2 ** 31)
    for trial in range(100):
        if name == "matmul":
            a = Parameter("a", _interior(rng, (3, 4)))
            b = Parameter("b", _interior(rng, (4, 2)))
            f = lambda tape: dc.vsum(dc.matmul(tape.param(a), tape.param(b)))
            params = [a, b]
        elif name == "scale_rows":
            a = Parameter("a", _interior(rng, (3, 4)))
            b = Parameter("b", _interior(rng, (3, 1)))
            f = lambda tape: dc.vsum(dc.scale_rows(tape.param(a), tape.param(b)))
            params = [a, b]
        else:
            vals = []
            for _ in range(arity):
                v = _interior(rng, (3, 4))
                # keep relu/clamp/min/max away from their kinks and ties
                v[np.abs(v) < 0.05] += 0.1
                v[np.abs(np.abs(v) - 0.5) < 0.05] += 0.1
                vals.append(v)
            params = [Parameter(f"p{i}", v) for i, v in enumerate(vals)]

            def f(tape, build=build, params=params):
                args = [tape.param(p) for p in params]
                return dc.vsum(build(tape, *args))

        err = finite_difference_check(f, params, step=1e-6)
        assert err <= 1e-6, f"{name} trial {trial}: rel err {err}"


class TestSgd:
    def test_zero_grad_is_noop(self):
        p = Parameter("x", [1.0, 2.0])
        dc.sgd_step([p], {p: np.zeros(2)}, lr=0.1, momentum=0.9)
        assert np.array_equal(p.value, [1.0, 2.0])

    def test_single_scalar_step(self):
        p = Parameter("x", 1.0)
        dc.sgd_step([p], {p: np.asarray(2.0)}, lr=0.1, momentum=0.0)
        assert p.value == pytest.approx(0.8)

    def test_quadratic_bowl_converges(self):
        target = np.array([0.3, -1.2, 4.0])
        p = Parameter("x", [0.0, 0.0, 0.0])
        opt = dc.SGD([p], lr=0.1, momentum=0.0)
        for _ in range(200):
            tape = Tape()
            x = tape.param(p)
            diff = dc.sub(x, tape.const(target))
            opt.step(tape.backward(dc.vsum(dc.mul(diff, diff))))
        assert np.abs(p.value - target).max() <= 1e-4

    def test_momentum_accumulates(self):
        p = Parameter("x", 0.0)
        vel = dc.sgd_step([p], {p: np.asarray(1.0)}, lr=0.1, momentum=0.5)
        dc.sgd_step([p], {p: np.asarray(1.0)}, lr=0.1, momentum=0.5, velocities=vel)
        # v1 = 1, v2 = 1.5 -> x = -(0.1 + 0.15)
        assert p.value == pytest.approx(-0.25)


class TestFiniteDifferenceCheck:
    def test_linear_function_is_exact(self):
        # truncation-free for a linear map, so a large step avoids roundoff
        p = Parameter("x", [1.0, -2.0, 3.0])
        f = lambda tape: dc.vsum(dc.mul(tape.param(p), 2.5))
        assert finite_difference_check(f, [p], step=1e-3) <= 1e-10

    def test_unwatched_parameter_counts_as_zero_grad(self):
        p = Parameter("x", [1.0])
        q = Parameter("unused", [1.0])
        f = lambda tape: dc.vsum(dc.mul(tape.param(p), tape.param(p)))
        assert finite_difference_check(f, [p, q]) <= 1e-9
