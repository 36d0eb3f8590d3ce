"""Numeric substrate tests: softmax, BCE, FC block, Adam, autodiff, FD gate."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierrec.errors import ConfigError, ShapeError, StateError
from hierrec.nn import autodiff as ad
from hierrec.nn.functional import bce_loss, sigmoid, softmax_rows
from hierrec.nn.gradcheck import grad_check
from hierrec.nn.layers import FcStackConfig, fc_stack_forward, init_fc_stack
from hierrec.nn.optim import adam_step
from hierrec.nn.params import ParameterStore


class TestSoftmax:
    def test_uniform_on_zero_row(self):
        out = softmax_rows(np.array([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_max_shift_avoids_overflow(self):
        out = softmax_rows(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-12)

    def test_reference_values(self):
        # e^x_i / sum e^x_j evaluated at 30-digit precision
        out = softmax_rows(np.array([[1.0, 2.0, 3.0]]))
        expected = [0.0900305731704, 0.244728471055, 0.665240955775]
        np.testing.assert_allclose(out[0], expected, atol=1e-12)

    @given(
        st.lists(
            st.lists(st.floats(-50, 50), min_size=2, max_size=6),
            min_size=1,
            max_size=5,
        ).filter(lambda rows: len({len(r) for r in rows}) == 1)
    )
    @settings(max_examples=80, deadline=None)
    def test_rows_sum_to_one_and_positive(self, rows):
        out = softmax_rows(np.array(rows, dtype=float))
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(out > 0)

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.floats(-40, 40))
    @settings(max_examples=80, deadline=None)
    def test_constant_shift_invariance(self, row, c):
        base = softmax_rows(np.array([row]))
        shifted = softmax_rows(np.array([row]) + c)
        assert np.max(np.abs(base - shifted)) < 1e-12


class TestBce:
    def test_maximum_entropy_point(self):
        assert bce_loss([0.5], [1]) == pytest.approx(0.69314718056, abs=1e-10)

    def test_perfect_prediction_near_zero(self):
        eps = 1e-7
        assert bce_loss([1.0 - eps], [1]) == pytest.approx(eps, abs=1e-9)

    def test_reference_value(self):
        # -(ln 0.9 + ln 0.8) / 2 at high precision
        assert bce_loss([0.9, 0.2], [1, 0]) == pytest.approx(
            0.16425203348601803, abs=1e-12
        )

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss([0.5, 0.5], [1])

    @given(
        st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=20),
        st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_non_negative(self, preds, data):
        labels = data.draw(
            st.lists(st.sampled_from([0, 1]), min_size=len(preds), max_size=len(preds))
        )
        assert bce_loss(preds, labels) >= 0.0


def _identity_stack(store, dim):
    cfg = FcStackConfig([dim, dim], activation="identity")
    init_fc_stack(store, "fc", cfg, np.random.default_rng(0))
    store.get("fc.l0.w").value[:] = np.eye(dim)
    store.get("fc.l0.b").value[:] = 0.0
    return cfg


class TestFcStack:
    def test_identity_configuration(self):
        store = ParameterStore()
        cfg = _identity_stack(store, 3)
        x = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, -1.0]])
        np.testing.assert_array_equal(fc_stack_forward(cfg, store, "fc", x), x)

    def test_relu_clamps_with_zero_weights(self):
        store = ParameterStore()
        cfg = FcStackConfig([3, 2], activation="relu")
        init_fc_stack(store, "fc", cfg, np.random.default_rng(0))
        store.get("fc.l0.w").value[:] = 0.0
        store.get("fc.l0.b").value[:] = np.array([[-1.0, 2.0]])
        out = fc_stack_forward(cfg, store, "fc", np.random.randn(5, 3))
        np.testing.assert_array_equal(out, np.tile([0.0, 2.0], (5, 1)))

    def test_batch_norm_train_normalizes(self):
        # oracle: direct per-feature mean/variance of the affine output
        store = ParameterStore()
        cfg = FcStackConfig([2, 2], activation="identity", use_batch_norm=True)
        init_fc_stack(store, "fc", cfg, np.random.default_rng(1))
        x = np.array([[1.0, 4.0], [3.0, -2.0], [0.5, 0.0], [-1.0, 2.0]])
        out = fc_stack_forward(cfg, store, "fc", x, mode="train", rng_seed=0)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-4)
        # exact value accounting for eps: var((a - mu)/sqrt(v + eps)) = v/(v + eps)
        affine = x @ store.value("fc.l0.w") + store.value("fc.l0.b")
        v = affine.var(axis=0)
        np.testing.assert_allclose(out.var(axis=0), v / (v + 1e-5), atol=1e-12)

    def test_batch_norm_eval_uses_running_stats(self):
        store = ParameterStore()
        cfg = FcStackConfig([2, 2], activation="identity", use_batch_norm=True)
        init_fc_stack(store, "fc", cfg, np.random.default_rng(1))
        rng = np.random.default_rng(2)
        for _ in range(50):
            fc_stack_forward(cfg, store, "fc", rng.normal(size=(32, 2)), mode="train")
        x = rng.normal(size=(8, 2))
        out1 = fc_stack_forward(cfg, store, "fc", x, mode="eval")
        out2 = fc_stack_forward(cfg, store, "fc", x, mode="eval")
        np.testing.assert_array_equal(out1, out2)  # eval does not mutate stats

    def test_dropout_deterministic_given_seed(self):
        store = ParameterStore()
        cfg = FcStackConfig([4, 4], activation="identity", dropout_rate=0.5)
        init_fc_stack(store, "fc", cfg, np.random.default_rng(3))
        x = np.random.default_rng(4).normal(size=(16, 4))
        out1 = fc_stack_forward(cfg, store, "fc", x, mode="train", rng_seed=7)
        out2 = fc_stack_forward(cfg, store, "fc", x, mode="train", rng_seed=7)
        out3 = fc_stack_forward(cfg, store, "fc", x, mode="train", rng_seed=8)
        np.testing.assert_array_equal(out1, out2)
        assert not np.array_equal(out1, out3)

    def test_dropout_disabled_in_eval(self):
        store = ParameterStore()
        cfg = _identity_stack(store, 3)
        cfg.dropout_rate = 0.9
        x = np.random.default_rng(5).normal(size=(4, 3))
        np.testing.assert_array_equal(
            fc_stack_forward(cfg, store, "fc", x, mode="eval"), x
        )

    def test_dimension_mismatch_names_stack(self):
        store = ParameterStore()
        cfg = _identity_stack(store, 3)
        with pytest.raises(ShapeError, match="fc"):
            fc_stack_forward(cfg, store, "fc", np.zeros((2, 4)))


class TestAdam:
    def _scalar_store(self, value=0.0):
        store = ParameterStore()
        store.add("theta", np.array([[value]]))
        return store

    def test_zero_gradient_is_fixed_point(self):
        store = ParameterStore()
        rng = np.random.default_rng(0)
        store.add("w", rng.normal(size=(3, 4)))
        before = store.value("w").copy()
        for _ in range(5):
            adam_step(store, lr=0.1)
        np.testing.assert_array_equal(store.value("w"), before)

    def test_first_step_bias_corrected(self):
        store = self._scalar_store(0.0)
        store.get("theta").grad[:] = 1.0
        adam_step(store, lr=0.1)
        assert store.value("theta")[0, 0] == pytest.approx(-0.1, abs=1e-7)
        assert store.step_count == 1

    def test_opposite_gradients_symmetric(self):
        store = ParameterStore()
        store.add("a", np.zeros((1, 1)))
        store.add("b", np.zeros((1, 1)))
        store.get("a").grad[:] = 2.5
        store.get("b").grad[:] = -2.5
        adam_step(store, lr=0.01)
        assert store.value("a")[0, 0] == pytest.approx(-store.value("b")[0, 0], abs=1e-15)

    def test_invalid_lr(self):
        store = self._scalar_store()
        with pytest.raises(ConfigError):
            adam_step(store, lr=0.0)

    def test_non_trainable_entries_skipped(self):
        store = ParameterStore()
        store.add("stats", np.ones((1, 2)), trainable=False)
        store.get("stats").grad[:] = 5.0
        adam_step(store, lr=0.5)
        np.testing.assert_array_equal(store.value("stats"), np.ones((1, 2)))


def _fd_op_grad(fn, args, wrt, h=1e-6):
    """Finite-difference gradient of sum(fn(*args)) w.r.t. args[wrt]."""
    arr = args[wrt]
    grad = np.zeros_like(arr)

    def value():
        return np.sum(fn(*[ad.leaf(a) for a in args]).value)

    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        lp = value()
        arr[idx] = orig - h
        lm = value()
        arr[idx] = orig
        grad[idx] = (lp - lm) / (2 * h)
        it.iternext()
    return grad


def _analytic_op_grads(fn, args):
    vs = [ad.leaf(a) for a in args]
    out = fn(*vs)
    ad.backward(ad.sum_all(out))
    return [v.grad if v.grad is not None else np.zeros_like(v.value) for v in vs]


OP_CASES = [
    ("matmul", lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)]),
    ("add_bias", lambda a, b: ad.add(a, b), [(3, 4), (1, 4)]),
    ("mul_broadcast", lambda a, b: ad.mul(a, b), [(2, 3, 4), (2, 3, 1)]),
    ("relu", lambda a: ad.relu(a), [(3, 4)]),
    ("tanh", lambda a: ad.tanh(a), [(3, 4)]),
    ("sigmoid", lambda a: ad.sigmoid(a), [(3, 4)]),
    ("softmax", lambda a: ad.mul(ad.softmax_rows(a), a), [(3, 4)]),
    ("bmm_vec", lambda w, x: ad.bmm_vec(w, x), [(3, 2, 4), (3, 4)]),
    ("concat", lambda a, b: ad.concat_cols([a, b]), [(3, 2), (3, 3)]),
    ("slice", lambda a: ad.slice_cols(a, 1, 3), [(3, 5)]),
    ("reshape", lambda a: ad.reshape(a, (6, 2)), [(3, 4)]),
]


@pytest.mark.parametrize("name,fn,shapes", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_op_gradients_match_fd(name, fn, shapes):
    rng = np.random.default_rng(hash(name) % 2**32)
    args = [rng.normal(size=s) for s in shapes]
    analytic = _analytic_op_grads(fn, args)
    for i in range(len(args)):
        fd = _fd_op_grad(fn, args, i)
        np.testing.assert_allclose(analytic[i], fd, atol=1e-7)


def test_gather_and_take_rows_gradients():
    rng = np.random.default_rng(42)
    table = rng.normal(size=(5, 3))
    idx = np.array([0, 2, 2, 4])

    def fn(t):
        return ad.gather_rows(t, idx)

    analytic = _analytic_op_grads(fn, [table])[0]
    fd = _fd_op_grad(fn, [table], 0)
    np.testing.assert_allclose(analytic, fd, atol=1e-7)


class TestBackward:
    def test_dead_parameter_gets_zero_gradient(self):
        x = ad.leaf(np.ones((2, 3)))
        w1 = ad.leaf(np.random.default_rng(0).normal(size=(3, 2)))
        w2 = ad.leaf(np.ones((3, 2)))  # never used
        loss = ad.sum_all(ad.matmul(x, w1))
        ad.backward(loss)
        assert w2.grad is None  # exactly zero contribution

    def test_single_affine_closed_form(self):
        # y = x W, loss = sum(y) -> dL/dW[i,j] = sum_n x[n,i]
        rng = np.random.default_rng(1)
        xv = rng.normal(size=(4, 3))
        x = ad.leaf(xv)
        w = ad.leaf(rng.normal(size=(3, 2)))
        ad.backward(ad.sum_all(ad.matmul(x, w)))
        expected = np.outer(xv.sum(axis=0), np.ones(2))
        np.testing.assert_allclose(w.grad, expected, atol=1e-12)

    def test_bce_gradient_through_sigmoid_is_residual(self):
        # d(mean BCE)/d(logit) = (sigmoid(z) - y) / n
        rng = np.random.default_rng(2)
        zv = rng.normal(size=(5, 1))
        labels = np.array([1, 0, 1, 1, 0])
        z = ad.leaf(zv)
        pred = ad.reshape(ad.predict_probs(z), (5,))
        ad.backward(ad.bce(pred, labels))
        expected = (sigmoid(zv).ravel() - labels) / 5
        np.testing.assert_allclose(z.grad.ravel(), expected, atol=1e-12)

    def test_backward_requires_scalar(self):
        with pytest.raises(StateError):
            ad.backward(ad.leaf(np.zeros((2, 2))))


class _StackTarget:
    """Standalone FC stack as a grad-check target."""

    def __init__(self, cfg, seed=0, n=6, deterministic=True):
        self.cfg = cfg
        self.store = ParameterStore()
        init_fc_stack(self.store, "fc", cfg, np.random.default_rng(seed))
        rng = np.random.default_rng(seed + 1)
        self.x = rng.normal(size=(n, cfg.input_dim))
        self.labels = rng.integers(0, 2, size=n)
        self.deterministic = deterministic

    def _forward(self):
        from hierrec.nn.layers import fc_stack, make_param_vars

        params = make_param_vars(self.store)
        h = fc_stack(
            self.cfg, params, self.store, "fc", ad.leaf(self.x), "train", 0
        )
        pool = ad.leaf(np.full((self.cfg.output_dim, 1), 1.0 / self.cfg.output_dim))
        logits = ad.matmul(h, pool)
        pred = ad.reshape(ad.predict_probs(logits), (self.x.shape[0],))
        return params, ad.bce(pred, self.labels)

    def loss(self):
        if not self.deterministic:
            return float(np.random.default_rng().normal())
        _, loss = self._forward()
        return float(loss.value)

    def compute_grads(self):
        params, loss = self._forward()
        ad.backward(loss)
        self.store.zero_grads()
        for name, var in params.items():
            if var.grad is not None:
                self.store.get(name).grad += var.grad


class TestGradCheck:
    def test_smooth_stack_passes_tight(self):
        cfg = FcStackConfig([3, 4, 2], activation="tanh")
        report = grad_check(_StackTarget(cfg), tolerance=1e-6)
        assert report.passed(), report.summary()

    def test_relu_stack_passes(self):
        cfg = FcStackConfig([3, 4, 2], activation="relu")
        report = grad_check(_StackTarget(cfg), tolerance=1e-4)
        assert report.passed(), report.summary()

    def test_batch_norm_backward(self):
        cfg = FcStackConfig([3, 4], activation="tanh", use_batch_norm=True)
        report = grad_check(_StackTarget(cfg), tolerance=1e-6)
        assert report.passed(), report.summary()

    def test_zero_tolerance_always_fails(self):
        cfg = FcStackConfig([3, 2], activation="identity")
        report = grad_check(_StackTarget(cfg), tolerance=0.0)
        assert not report.passed()
        assert report.violations

    def test_corrupt_hook_names_parameter(self):
        cfg = FcStackConfig([3, 2], activation="tanh")
        report = grad_check(
            _StackTarget(cfg), tolerance=1e-4, corrupt_grad_of="fc.l0.w"
        )
        assert "fc.l0.w" in report.violations
        assert "fc.l0.w" in report.summary()

    def test_nondeterministic_forward_detected(self):
        cfg = FcStackConfig([3, 2], activation="identity")
        with pytest.raises(StateError, match="non-deterministic"):
            grad_check(_StackTarget(cfg, deterministic=False), tolerance=1e-4)
