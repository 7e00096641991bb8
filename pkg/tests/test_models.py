import numpy as np
import pytest

from pflsim.errors import ConfigError
from pflsim.fed_data import ProviderGroup, Record, generate_synthetic
from pflsim.models import (
    Layer,
    LayeredModel,
    build_mlp,
    checkpoint_bytes,
    freeze_layers,
    load_checkpoint,
    lora_attach,
    lora_merge,
    lora_parameter_count,
    per_group_gradient,
    softmax,
    stack_records,
)


def toy_group(seed=0, n=12, d=6, classes=4):
    rng = np.random.default_rng(seed)
    records = tuple(
        Record(features=rng.standard_normal(d), answer=f"c{c}", answer_id=int(c))
        for c in rng.integers(0, classes, size=n)
    )
    return ProviderGroup(provider_id="p0", records=records)


def finite_difference_grads(model, x, y, h=1e-5):
    names = model.trainable_names()
    out = {}
    for name in names:
        ref = model._param_ref(name)
        grad = np.zeros_like(ref)
        it = np.nditer(ref, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = ref[idx]
            ref[idx] = orig + h
            up = model.loss(x, y)
            ref[idx] = orig - h
            down = model.loss(x, y)
            ref[idx] = orig
            grad[idx] = (up - down) / (2 * h)
            it.iternext()
        out[name] = grad
    return out


class TestForward:
    def test_softmax_sums_to_one(self):
        model = build_mlp(6, [8], 4, seed=1)
        x = np.random.default_rng(0).standard_normal((9, 6))
        probs = softmax(model.forward(x))
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9

    def test_finite_outputs(self):
        model = build_mlp(6, [8, 8], 4, seed=2)
        x = 100.0 * np.random.default_rng(1).standard_normal((5, 6))
        assert np.all(np.isfinite(model.forward(x)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(Exception):
            LayeredModel([Layer("a", np.ones((3, 4))), Layer("b", np.ones((2, 5)))])


class TestPerGroupGradient:
    def test_zero_weight_model_analytic(self):
        # With all-zero weights and identity activation the logits are zero,
        # so the head gradient is ((softmax - onehot) / n)^T X with softmax
        # uniform.
        d, classes = 5, 4
        group = toy_group(seed=3, n=40, d=d, classes=classes)
        x, y = stack_records(group.records)
        model = LayeredModel([Layer("head", np.zeros((classes, d)))], activation="identity")
        grads = per_group_gradient(model, group)
        onehot = np.zeros((len(y), classes))
        onehot[np.arange(len(y)), y] = 1.0
        want = (np.full((len(y), classes), 1.0 / classes) - onehot).T @ x / len(y)
        assert np.abs(grads["head"] - want).max() < 1e-12

    def test_finite_difference(self):
        model = build_mlp(6, [7], 4, seed=4)
        group = toy_group(seed=5)
        x, y = stack_records(group.records)
        _, grads = model.loss_and_grads(x, y)
        fd = finite_difference_grads(model, x, y)
        for name in grads:
            denom = max(np.abs(fd[name]).max(), 1e-8)
            assert np.abs(grads[name] - fd[name]).max() / denom < 1e-5

    def test_duplicated_group_same_mean_gradient(self):
        model = build_mlp(6, [7], 4, seed=6)
        group = toy_group(seed=7)
        doubled = ProviderGroup(provider_id="p0", records=group.records + group.records)
        g1 = per_group_gradient(model, group)
        g2 = per_group_gradient(model, doubled)
        for name in g1:
            assert np.abs(g1[name] - g2[name]).max() < 1e-12

    def test_gradient_sweep_random_models(self):
        # 100 random small models against central differences.
        rng = np.random.default_rng(8)
        worst = 0.0
        for trial in range(100):
            d = int(rng.integers(2, 6))
            hidden = [int(rng.integers(2, 7))] if trial % 2 == 0 else []
            classes = int(rng.integers(2, 5))
            model = build_mlp(d, hidden, classes, seed=trial)
            x = rng.standard_normal((5, d))
            y = rng.integers(0, classes, size=5)
            _, grads = model.loss_and_grads(x, y)
            fd = finite_difference_grads(model, x, y)
            for name in grads:
                denom = max(np.abs(fd[name]).max(), 1e-8)
                worst = max(worst, np.abs(grads[name] - fd[name]).max() / denom)
        assert worst < 1e-4


class TestLora:
    def test_reference_parameter_count(self):
        # 36 attention layers, query and value projections of 768x768:
        # r * 2 * 768 per matrix over 72 matrices = 110,592 per rank.
        shapes = [(768, 768)] * 72
        assert lora_parameter_count(shapes, 1) == 110_592
        assert lora_parameter_count(shapes, 6) == 663_552

    def test_attach_counts_on_real_model(self):
        layers = [Layer(f"proj{i}", np.zeros((768, 768))) for i in range(72)]
        model = LayeredModel(layers, activation="tanh")
        _, count = lora_attach(model, [], rank=1, seed=0)
        assert count == 110_592

    def test_toy_count(self):
        model = LayeredModel([Layer("only", np.zeros((4, 4)))], activation="identity")
        _, count = lora_attach(model, ["only"], rank=2, seed=0)
        assert count == 16  # 2 * (4 + 4)

    def test_mixed_direct_and_adapted(self):
        model = build_mlp(6, [8], 4, seed=9)
        _, count = lora_attach(model, ["dense0"], rank=2, seed=0)
        # dense0 adapted (2*(8+6)=28), head still directly trainable (4*8).
        assert count == 28 + 32
        assert model.layer("dense0").frozen

    def test_unknown_target_rejected(self):
        model = build_mlp(6, [8], 4, seed=9)
        with pytest.raises(ConfigError):
            lora_attach(model, ["nope"], rank=2)

    def test_zero_a_merge_is_identity(self):
        model = build_mlp(6, [8], 4, seed=10)
        base = {l.name: l.weight.copy() for l in model.layers}
        lora_attach(model, [], rank=3, seed=1, init_std=0.0)
        merged = lora_merge(model)
        for layer in merged.layers:
            assert np.array_equal(layer.weight, base[layer.name])

    def test_merge_matches_direct_multiply(self):
        model = build_mlp(6, [8], 4, seed=11)
        base = {l.name: l.weight.copy() for l in model.layers}
        lora_attach(model, [], rank=2, seed=2)
        rng = np.random.default_rng(3)
        for name, ad in model.adapters.items():
            ad.a[...] = rng.standard_normal(ad.a.shape)
            ad.b[...] = rng.standard_normal(ad.b.shape)
        merged = lora_merge(model)
        for layer in merged.layers:
            ad = model.adapters[layer.name]
            want = base[layer.name] + ad.scaling * (ad.a @ ad.b)
            assert np.abs(layer.weight - want).max() < 1e-12

    def test_forward_equivalence_after_merge(self):
        model = build_mlp(6, [8, 8], 4, seed=12)
        lora_attach(model, [], rank=2, seed=4)
        rng = np.random.default_rng(5)
        for ad in model.adapters.values():
            ad.a[...] = rng.standard_normal(ad.a.shape)
            ad.b[...] = rng.standard_normal(ad.b.shape)
        x = rng.standard_normal((20, 6))
        before = model.forward(x)
        merged = lora_merge(model)
        assert not merged.adapters
        assert np.abs(merged.forward(x) - before).max() < 1e-9

    def test_merged_checkpoint_same_size_as_base(self):
        base = build_mlp(6, [8], 4, seed=13)
        size_base = len(checkpoint_bytes(base))
        adapted = build_mlp(6, [8], 4, seed=13)
        lora_attach(adapted, [], rank=2, seed=6)
        merged = lora_merge(adapted)
        assert len(checkpoint_bytes(merged)) == size_base

    def test_default_scaling_is_one_over_rank(self):
        model = build_mlp(6, [8], 4, seed=14)
        lora_attach(model, [], rank=4, seed=7)
        assert all(ad.scaling == 0.25 for ad in model.adapters.values())

    def test_adapter_gradients_flow(self):
        model = build_mlp(6, [8], 4, seed=15)
        lora_attach(model, [], rank=2, seed=8, init_std=0.1)
        group = toy_group(seed=16)
        x, y = stack_records(group.records)
        _, grads = model.loss_and_grads(x, y)
        fd = finite_difference_grads(model, x, y)
        for name in grads:
            denom = max(np.abs(fd[name]).max(), 1e-8)
            assert np.abs(grads[name] - fd[name]).max() / denom < 1e-4


class TestFreezing:
    def test_frozen_layers_not_trainable(self):
        model = build_mlp(6, [8], 4, seed=17)
        freeze_layers(model, ["dense0"])
        assert model.trainable_names() == ["head"]
        assert model.trainable_parameter_count() == 4 * 8

    def test_frozen_bits_identical_across_training(self):
        ds = generate_synthetic(
            n_clients=2,
            providers_per_client=3,
            records_per_provider=10,
            feature_dim=6,
            n_classes=4,
            validation_size=20,
            seed=18,
        )
        from pflsim.protocols import run_fedavg

        model = build_mlp(6, [8], 4, seed=19)
        freeze_layers(model, ["dense0"])
        frozen_before = model.layer("dense0").weight.copy()
        run_fedavg(ds, model, rounds=3, clients_per_round=2, seed=20)
        assert np.array_equal(model.layer("dense0").weight, frozen_before)


class TestCheckpoint:
    def test_bit_exact_round_trip(self):
        model = build_mlp(5, [7, 3], 4, seed=21)
        freeze_layers(model, ["dense1"])
        blob = checkpoint_bytes(model)
        restored = load_checkpoint(blob)
        assert checkpoint_bytes(restored) == blob
        assert [l.name for l in restored.layers] == [l.name for l in model.layers]
        assert restored.layer("dense1").frozen

    def test_file_round_trip(self, tmp_path):
        from pflsim.models import save_checkpoint

        model = build_mlp(4, [5], 3, seed=22)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        assert checkpoint_bytes(load_checkpoint(str(path))) == checkpoint_bytes(model)

    def test_adapters_must_merge_first(self):
        model = build_mlp(4, [5], 3, seed=23)
        lora_attach(model, [], rank=1)
        with pytest.raises(ConfigError):
            checkpoint_bytes(model)
