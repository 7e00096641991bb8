import numpy as np
import pytest

from pflsim.errors import ConfigError
from pflsim.fed_data import (
    class_labels,
    from_jsonl,
    generate_synthetic,
    min_group_count,
    to_jsonl,
    without_provider,
)

TABLE_PROVIDER_COUNTS = [400, 418, 404, 414, 429, 423, 423, 416, 401, 421]


def small_ds(seed=0, **kw):
    defaults = dict(
        n_clients=4,
        providers_per_client=6,
        records_per_provider=8,
        feature_dim=8,
        n_classes=5,
        heterogeneity=0.5,
        validation_size=60,
        seed=seed,
    )
    defaults.update(kw)
    return generate_synthetic(**defaults)


class TestGeneration:
    def test_reference_provider_counts(self):
        ds = generate_synthetic(
            n_clients=10,
            providers_per_client=TABLE_PROVIDER_COUNTS,
            records_per_provider=1,
            feature_dim=4,
            n_classes=3,
            validation_size=10,
            seed=1,
        )
        assert [len(c.groups) for c in ds.clients] == TABLE_PROVIDER_COUNTS
        assert min_group_count(ds) == 400

    def test_zero_heterogeneity_providers_identical(self):
        ds = small_ds(heterogeneity=0.0, records_per_provider=200, providers_per_client=2)
        # Two-sample mean test: provider means differ only by sampling noise.
        groups = ds.clients[0].groups
        a = np.stack([r.features for r in groups[0].records])
        b = np.stack([r.features for r in groups[1].records])
        diff = np.linalg.norm(a.mean(axis=0) - b.mean(axis=0))
        # Features are mean-of-classes + noise; stderr ~ sqrt(2/200) per dim.
        assert diff < 6 * np.sqrt(a.shape[1] * 2 / 200)

    def test_heterogeneity_separates_providers(self):
        ds = small_ds(heterogeneity=1.0, records_per_provider=200, providers_per_client=2)
        groups = ds.clients[0].groups
        a = np.stack([r.features for r in groups[0].records])
        b = np.stack([r.features for r in groups[1].records])
        assert np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)) > 1.0

    def test_same_seed_byte_identical(self):
        assert to_jsonl(small_ds(seed=7)) == to_jsonl(small_ds(seed=7))

    def test_different_seed_differs(self):
        assert to_jsonl(small_ds(seed=7)) != to_jsonl(small_ds(seed=8))

    def test_partition_property(self):
        ds = small_ds()
        seen_ids = set()
        for client in ds.clients:
            for group in client.groups:
                assert group.provider_id not in seen_ids
                seen_ids.add(group.provider_id)
                assert len(group.records) > 0
        assert len(seen_ids) == sum(len(c.groups) for c in ds.clients)

    def test_records_per_provider_range(self):
        ds = small_ds(records_per_provider=(3, 6))
        counts = {len(g) for c in ds.clients for g in c.groups}
        assert counts <= {3, 4, 5, 6}

    def test_labels_and_answers_consistent(self):
        ds = small_ds()
        for client in ds.clients:
            for group in client.groups:
                for r in group.records:
                    assert r.answer == ds.labels[r.answer_id]
                    assert np.all(np.isfinite(r.features))

    def test_validation_mixes_seen_and_unseen(self):
        ds = small_ds(validation_size=400)
        assert len(ds.validation) == 400

    def test_conditioning_scales_features(self):
        iso = small_ds(conditioning=1.0, records_per_provider=50)
        hard = small_ds(conditioning=50.0, records_per_provider=50)
        x_iso = np.stack([r.features for r in iso.clients[0].all_records()])
        x_hard = np.stack([r.features for r in hard.clients[0].all_records()])
        cond_iso = np.linalg.cond(np.cov(x_iso.T))
        cond_hard = np.linalg.cond(np.cov(x_hard.T))
        assert cond_hard > 10 * cond_iso

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            small_ds(providers_per_client=0)
        with pytest.raises(ConfigError):
            small_ds(heterogeneity=1.5)
        with pytest.raises(ConfigError):
            generate_synthetic(n_clients=0)


class TestMinGroupCount:
    def test_single_client_single_provider(self):
        ds = generate_synthetic(
            n_clients=1,
            providers_per_client=1,
            records_per_provider=3,
            feature_dim=4,
            n_classes=2,
            validation_size=5,
            seed=0,
        )
        assert min_group_count(ds) == 1

    def test_removing_provider_recounts(self):
        ds = generate_synthetic(
            n_clients=10,
            providers_per_client=TABLE_PROVIDER_COUNTS,
            records_per_provider=1,
            feature_dim=4,
            n_classes=3,
            validation_size=10,
            seed=1,
        )
        smaller = without_provider(ds, 0, ds.clients[0].groups[0].provider_id)
        assert min_group_count(smaller) == 399

    def test_removal_leaves_other_providers_untouched(self):
        ds = small_ds()
        victim = ds.clients[1].groups[2].provider_id
        adj = without_provider(ds, 1, victim)
        assert [g.provider_id for g in adj.clients[0].groups] == [
            g.provider_id for g in ds.clients[0].groups
        ]
        kept = [g.provider_id for g in adj.clients[1].groups]
        assert victim not in kept and len(kept) == len(ds.clients[1].groups) - 1

    def test_unknown_provider_rejected(self):
        ds = small_ds()
        with pytest.raises(ConfigError):
            without_provider(ds, 0, "nope")


class TestJsonl:
    def test_round_trip(self):
        ds = small_ds()
        text = to_jsonl(ds)
        assert to_jsonl(from_jsonl(text)) == text

    def test_file_round_trip(self, tmp_path):
        from pflsim.fed_data import write_jsonl

        ds = small_ds()
        path = tmp_path / "ds.jsonl"
        write_jsonl(ds, path)
        assert to_jsonl(from_jsonl(str(path))) == to_jsonl(ds)

    def test_validation_has_null_client(self):
        import json

        lines = to_jsonl(small_ds()).strip().split("\n")
        head = json.loads(lines[0])
        assert head["kind"] == "pflsim-dataset"
        tail = json.loads(lines[-1])
        assert tail["client_id"] is None and tail["provider_id"] is None


class TestClassLabels:
    def test_known_vocab_prefix(self):
        assert class_labels(3) == ("total", "subtotal", "amount")

    def test_extends_past_vocab(self):
        labels = class_labels(20)
        assert len(labels) == 20 and len(set(labels)) == 20
        assert labels[16] == "field16"
