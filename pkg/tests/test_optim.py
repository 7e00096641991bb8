import math

import numpy as np
import pytest

from pflsim.errors import ConfigError
from pflsim.optim import (
    AdamWState,
    GradClip,
    MomentumState,
    OptimizerConfig,
    ShampooConfig,
    ShampooState,
    adamw_step,
    clip,
    clip_elementwise,
    clip_l2,
    l2_norm,
    make_optimizer,
    momentum_step,
    sgd_step,
    shampoo_step,
)


class TestClip:
    def test_l2_scales_down(self):
        v = np.array([0.6, 0.8])  # norm 1.0
        out = clip_l2(v, 0.5)
        assert math.isclose(np.linalg.norm(out), 0.5, rel_tol=1e-12)
        assert np.allclose(out / np.linalg.norm(out), v, atol=1e-12)  # direction kept

    def test_l2_leaves_small_update(self):
        v = np.array([0.3])
        assert np.array_equal(clip_l2(v, 0.5), v)

    def test_elementwise(self):
        out = clip_elementwise(np.array([0.3, -0.5]), 0.2)
        assert np.array_equal(out, np.array([0.2, -0.2]))

    def test_dict_l2_uses_global_norm(self):
        update = {"a": np.array([3.0]), "b": np.array([4.0])}  # norm 5
        out = clip(update, GradClip("l2", 1.0))
        assert math.isclose(l2_norm(out), 1.0, rel_tol=1e-12)

    @pytest.mark.parametrize("mode,value", [("l2", 0.5), ("element", 0.2)])
    def test_idempotent(self, mode, value):
        rng = np.random.default_rng(0)
        update = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(7)}
        gc = GradClip(mode, value)
        once = clip(update, gc)
        twice = clip(once, gc)
        for k in update:
            assert np.array_equal(once[k], twice[k])

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            GradClip("mad", 1.0)


class TestFirstOrderSteps:
    def test_sgd(self):
        params = {"w": np.array([1.0, 2.0])}
        grads = {"w": np.array([0.5, -1.0])}
        out = sgd_step(params, grads, lr=0.1)
        assert np.allclose(out["w"], [0.95, 2.1], atol=1e-15)

    def test_momentum_beta_zero_equals_sgd(self):
        rng = np.random.default_rng(1)
        params = {"w": rng.standard_normal(5)}
        state = MomentumState()
        for _ in range(3):
            grads = {"w": rng.standard_normal(5)}
            via_momentum = momentum_step(state, params, grads, lr=0.05, beta=0.0)
            via_sgd = sgd_step(params, grads, lr=0.05)
            assert np.array_equal(via_momentum["w"], via_sgd["w"])
            params = via_momentum

    def test_momentum_accumulates(self):
        state = MomentumState()
        params = {"w": np.zeros(1)}
        grads = {"w": np.ones(1)}
        params = momentum_step(state, params, grads, lr=1.0, beta=0.5)
        params = momentum_step(state, params, grads, lr=1.0, beta=0.5)
        # v1 = 1, v2 = 1.5; w = -(1 + 1.5)
        assert np.allclose(params["w"], [-2.5], atol=1e-15)

    def test_adamw_first_step_scalar(self):
        # From zero state the bias-corrected step is g / (|g| + eps).
        state = AdamWState()
        g = 0.37
        params = {"w": np.zeros(1)}
        out = adamw_step(state, params, {"w": np.array([g])}, lr=0.01)
        want = -0.01 * g / (abs(g) + 1e-8)
        assert math.isclose(out["w"][0], want, rel_tol=1e-9)

    def test_adamw_weight_decay_pure_shrink(self):
        state = AdamWState()
        params = {"w": np.array([2.0])}
        out = adamw_step(state, params, {"w": np.zeros(1)}, lr=0.1, weight_decay=0.01)
        assert math.isclose(out["w"][0], 2.0 - 0.1 * 0.01 * 2.0, rel_tol=1e-12)

    def test_optimizer_wrapper_dispatch(self):
        rng = np.random.default_rng(2)
        params = {"w": rng.standard_normal((2, 3))}
        grads = {"w": rng.standard_normal((2, 3))}
        for kind in ("sgd", "momentum", "adamw"):
            opt = make_optimizer(OptimizerConfig(kind=kind, lr=0.01))
            out = opt.step(params, grads)
            assert out["w"].shape == params["w"].shape

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            OptimizerConfig(kind="lion")


class TestShampoo:
    def test_fresh_state_equals_sgd(self):
        # Identity caches and an infinite clip reproduce SGD exactly, for a
        # whole trajectory shorter than the first preconditioner refresh.
        rng = np.random.default_rng(3)
        w_shampoo = {"w": rng.standard_normal((4, 3))}
        w_sgd = {k: v.copy() for k, v in w_shampoo.items()}
        state = ShampooState()
        for t in range(1, 51):
            grads = {"w": rng.standard_normal((4, 3))}
            w_shampoo = shampoo_step(state, w_shampoo, grads, lr=0.1, clip_value=math.inf, t=t)
            w_sgd = sgd_step(w_sgd, grads, lr=0.1)
            assert np.array_equal(w_shampoo["w"], w_sgd["w"])

    def test_scalar_closed_form(self):
        # 1x1 layer with accumulated L = R = [g^2 * s]: the effective step is
        # g / (g^2 s + ridge)^(1/2).
        g, s, ridge = 0.7, 5.0, 1e-4
        cfg = ShampooConfig(ridge=ridge, stat_interval=1, precond_interval=1)
        state = ShampooState(cfg)
        st = state._layer("w", (1, 1))
        st.left = np.array([[g * g * s]])
        st.right = np.array([[g * g * s]])
        out = shampoo_step(
            state, {"w": np.zeros((1, 1))}, {"w": np.array([[g]])}, lr=1.0, clip_value=math.inf, t=1
        )
        # t=1 with stat_interval=1 adds one more g^2 before the refresh
        acc = g * g * (s + 1)
        want = -g / math.sqrt(acc + ridge)
        assert math.isclose(out["w"][0, 0], want, rel_tol=1e-10)

    def test_elementwise_clip_bounds_delta(self):
        rng = np.random.default_rng(4)
        params = {"w": np.zeros((3, 3))}
        grads = {"w": 100.0 * rng.standard_normal((3, 3))}
        lr, c = 0.5, 0.2
        out = shampoo_step(ShampooState(), params, grads, lr=lr, clip_value=c, t=1)
        assert np.abs(out["w"] - params["w"]).max() <= lr * c * (1 + 1e-12)

    def test_statistics_update_schedule(self):
        cfg = ShampooConfig(stat_interval=2, precond_interval=4)
        state = ShampooState(cfg)
        params = {"w": np.zeros((2, 2))}
        grads = {"w": np.eye(2)}
        shampoo_step(state, params, grads, lr=0.1, clip_value=math.inf, t=1)
        assert np.array_equal(state.layers["w"].left, np.eye(2))  # untouched at t=1
        shampoo_step(state, params, grads, lr=0.1, clip_value=math.inf, t=2)
        assert np.array_equal(state.layers["w"].left, 2 * np.eye(2))  # I + G G^T
        assert np.array_equal(state.layers["w"].left_quarter, np.eye(2))  # cache not refreshed
        shampoo_step(state, params, grads, lr=0.1, clip_value=math.inf, t=4)
        assert not np.array_equal(state.layers["w"].left_quarter, np.eye(2))

    def test_preconditioning_beats_sgd_on_ill_conditioned_bowl(self):
        # Quadratic bowl with condition number 100: loss = 0.5 w^T H w.
        scales = np.array([1.0, 10.0])  # H = diag(1, 100)
        h = np.diag(scales**2)

        def loss(w):
            return 0.5 * float(w.ravel() @ h @ w.ravel())

        def grad(w):
            return (h @ w.ravel()).reshape(1, 2)

        w0 = np.array([[1.0, 1.0]])

        def run(step_fn, iters):
            w = w0.copy()
            history = []
            for t in range(1, iters + 1):
                w = step_fn(w, t)
                history.append(loss(w))
            return history

        cfg = ShampooConfig(stat_interval=1, precond_interval=1)
        state = ShampooState(cfg)

        def shampoo(w, t):
            # The double fourth-root normalizes the gradient scale away, so
            # Shampoo's tuned lr sits much higher than SGD's stability limit.
            return shampoo_step(
                state, {"w": w}, {"w": grad(w)}, lr=1.0, clip_value=math.inf, t=t
            )["w"]

        def sgd(w, t):
            # Empirically best constant lr for H's spectrum [1, 100].
            return sgd_step({"w": w}, {"w": grad(w)}, lr=0.019)["w"]

        shampoo_hist = run(shampoo, 1500)
        sgd_hist = run(sgd, 1500)
        target = 1e-6
        first = next((i for i, v in enumerate(shampoo_hist) if v < target), None)
        first_sgd = next((i for i, v in enumerate(sgd_hist) if v < target), None)
        assert first is not None
        assert first_sgd is None or first < first_sgd
