"""Hierarchical model tests: embeddings, trace invariants, ablations,
oracle equivalence, checkpoints and the attention export."""

import csv
import json

import numpy as np
import pytest

from hierrec.checkpoint import load_checkpoint, save_checkpoint
from hierrec.data import Batch, FeatureSchema
from hierrec.dynamic import DynamicShape
from hierrec.errors import CheckpointError, ConfigError, LookupError_, StateError
from hierrec.experiments import tiny_batch, tiny_hierrec_config
from hierrec.model import (
    HierRecConfig,
    HierRecModel,
    export_attention_weights,
)
from hierrec.nn.layers import FcStackConfig

from reference_impls import hierrec_reference


@pytest.fixture
def schema():
    return FeatureSchema(
        scenario_field_name="scenario",
        common_field_names=("f0", "f1", "f2", "f3"),
        scenario_cardinality=3,
        common_cardinalities=(5, 4, 6, 3),
    )


@pytest.fixture
def model(schema):
    return HierRecModel(tiny_hierrec_config(), schema, seed=5)


class TestConfig:
    def test_default_condition_length(self):
        cfg = HierRecConfig()  # d=16, global 64, r=16, explicit out 64
        assert cfg.explicit_shape().condition_length() == 2128

    def test_final_width_mismatch_fails_at_build(self, schema):
        cfg = tiny_hierrec_config()
        cfg.explicit_condition_fc = FcStackConfig([3, 25], "identity")  # needs 26
        with pytest.raises(ConfigError, match="26"):
            HierRecModel(cfg, schema)

    def test_attention_width_checked(self, schema):
        cfg = tiny_hierrec_config()
        cfg.attention_fc = FcStackConfig([3, 7], "identity")  # needs 2*4=8
        with pytest.raises(ConfigError, match="8"):
            HierRecModel(cfg, schema)

    def test_roundtrip_dict(self, schema):
        cfg = tiny_hierrec_config().resolved(schema)
        again = HierRecConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()


class TestEmbedding:
    def test_row_selection(self, schema, model):
        tables = model.store
        batch = Batch(
            scenario_ids=np.array([1, 0]),
            common_ids=np.zeros((2, 4), dtype=np.int64),
            labels=np.zeros(2, dtype=np.int64),
        )
        e_s, e_c = model.embed_batch(batch)
        np.testing.assert_array_equal(e_s[0], tables.value("embed.scenario")[1])
        np.testing.assert_array_equal(e_s[1], tables.value("embed.scenario")[0])

    def test_concatenation_order(self, schema, model):
        batch = Batch(
            scenario_ids=np.array([0]),
            common_ids=np.array([[2, 1, 3, 0]]),
            labels=np.zeros(1, dtype=np.int64),
        )
        _, e_c = model.embed_batch(batch)
        d = model.config.embedding_dim
        for i, name in enumerate(schema.common_field_names):
            expected = model.store.value(f"embed.{name}")[batch.common_ids[0, i]]
            np.testing.assert_array_equal(e_c[0, i * d : (i + 1) * d], expected)

    def test_lookup_matches_one_hot_matmul(self, schema, model):
        rng = np.random.default_rng(0)
        batch = tiny_batch(schema, n=10, seed=3)
        e_s, _ = model.embed_batch(batch)
        table = model.store.value("embed.scenario")
        for j in range(10):
            onehot = np.zeros(schema.scenario_cardinality)
            onehot[batch.scenario_ids[j]] = 1.0
            np.testing.assert_allclose(e_s[j], onehot @ table, atol=1e-15)

    def test_out_of_range_index_names_field_and_row(self, schema, model):
        batch = Batch(
            scenario_ids=np.array([0, 0]),
            common_ids=np.array([[0, 0, 0, 0], [0, 9, 0, 0]]),
            labels=np.zeros(2, dtype=np.int64),
        )
        with pytest.raises(LookupError_, match="'f1'") as err:
            model.forward(batch)
        assert "row 1" in str(err.value)


class TestForward:
    def test_predictions_strictly_inside_unit_interval(self, schema, model):
        trace = model.forward(tiny_batch(schema, n=50, seed=1))
        assert np.all(trace.predictions > 0) and np.all(trace.predictions < 1)
        assert trace.predictions.shape == (50,)

    def test_identical_samples_identical_outputs(self, schema, model):
        batch = Batch(
            scenario_ids=np.array([2, 2]),
            common_ids=np.array([[1, 1, 1, 1], [1, 1, 1, 1]]),
            labels=np.zeros(2, dtype=np.int64),
        )
        trace = model.forward(batch, mode="eval")
        assert trace.predictions[0] == trace.predictions[1]

    def test_attention_rows_sum_to_one(self, schema, model):
        trace = model.forward(tiny_batch(schema, n=20, seed=2))
        sums = trace.attn_weights.sum(axis=-1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)
        assert np.all(trace.attn_weights > 0)

    def test_distinct_scenarios_distinct_conditions(self, schema, model):
        batch = Batch(
            scenario_ids=np.array([0, 1]),
            common_ids=np.zeros((2, 4), dtype=np.int64),
            labels=np.zeros(2, dtype=np.int64),
        )
        trace = model.forward(batch)
        assert not np.allclose(trace.explicit_condition[0], trace.explicit_condition[1])

    def test_uniform_attention_when_logits_zero(self, schema, model):
        model.store.get("attention.l0.w").value[:] = 0.0
        model.store.get("attention.l0.b").value[:] = 0.0
        trace = model.forward(tiny_batch(schema, n=4, seed=4))
        np.testing.assert_allclose(trace.attn_weights, 0.25, atol=1e-15)

    def test_shared_condition_fc_same_weights_same_conditions(self, schema, model):
        # force both heads to emit identical attention rows
        model.store.get("attention.l0.w").value[:] = 0.0
        model.store.get("attention.l0.b").value[:] = 0.0
        trace = model.forward(tiny_batch(schema, n=6, seed=5))
        np.testing.assert_allclose(
            trace.implicit_conditions[0], trace.implicit_conditions[1], atol=1e-12
        )

    def test_weighted_embedding_broadcast(self, schema, model):
        batch = tiny_batch(schema, n=3, seed=6)
        trace = model.forward(batch)
        _, e_c = model.embed_batch(batch)
        d = model.config.embedding_dim
        g = 1
        manual = np.repeat(trace.attn_weights[:, g, :], d, axis=1) * e_c
        np.testing.assert_allclose(trace.weighted_embeds[g], manual, atol=1e-12)

    def test_uniform_weights_scale_embeddings(self, schema, model):
        model.store.get("attention.l0.w").value[:] = 0.0
        model.store.get("attention.l0.b").value[:] = 0.0
        batch = tiny_batch(schema, n=3, seed=7)
        trace = model.forward(batch)
        _, e_c = model.embed_batch(batch)
        np.testing.assert_allclose(trace.weighted_embeds[0], e_c / 4.0, atol=1e-12)


class TestAblations:
    def test_multi_head_ablation_single_head(self, schema):
        cfg = tiny_hierrec_config()
        cfg.ablate_multi_head = True
        cfg.attention_fc = None  # re-derive for one head
        model = HierRecModel(cfg, schema, seed=5)
        trace = model.forward(tiny_batch(schema, n=4, seed=1))
        assert trace.attn_weights.shape[1] == 1
        assert len(trace.implicit_reprs) == 1

    def test_implicit_ablation_skips_attention(self, schema):
        cfg = tiny_hierrec_config()
        cfg.ablate_implicit = True
        model = HierRecModel(cfg, schema, seed=5)
        trace = model.forward(tiny_batch(schema, n=4, seed=1))
        assert trace.implicit_conditions == []
        assert trace.attn_weights is None
        assert "attention.l0.w" not in model.store
        assert np.all((trace.predictions > 0) & (trace.predictions < 1))

    def test_explicit_ablation_uses_static_projection(self, schema):
        cfg = tiny_hierrec_config()
        cfg.ablate_explicit = True
        model = HierRecModel(cfg, schema, seed=5)
        trace = model.forward(tiny_batch(schema, n=4, seed=1))
        assert trace.explicit_condition is None
        assert "explicit_proj.w" in model.store
        assert "explicit_cond.l0.w" not in model.store
        assert trace.explicit_repr.shape == (4, cfg.explicit_out_dim)

    def test_parameter_count_closed_form_implicit_ablated(self, schema):
        cfg = tiny_hierrec_config()
        cfg.ablate_implicit = True
        model = HierRecModel(cfg, schema, seed=5)
        d = cfg.embedding_dim
        embeddings = schema.scenario_cardinality * d + sum(
            c * d for c in schema.common_cardinalities
        )
        expected = (
            embeddings
            + cfg.global_fc.num_params()
            + cfg.explicit_condition_fc.num_params()
            + cfg.explicit_out_dim + 1  # head
        )
        assert model.parameter_count() == expected

    def test_parameter_count_closed_form_full(self, schema, model):
        cfg = model.config
        d = cfg.embedding_dim
        embeddings = schema.scenario_cardinality * d + sum(
            c * d for c in schema.common_cardinalities
        )
        expected = (
            embeddings
            + cfg.global_fc.num_params()
            + cfg.explicit_condition_fc.num_params()
            + cfg.attention_fc.num_params()
            + cfg.implicit_condition_fc.num_params()
            + cfg.effective_heads * cfg.implicit_out_dim + 1
        )
        assert model.parameter_count() == expected


class TestOracleEquivalence:
    def _compare(self, model, schema, n, seed, atol=1e-10):
        batch = tiny_batch(schema, n=n, seed=seed)
        trace = model.forward(batch, mode="eval")
        weights = {k: e.value for k, e in model.store.entries.items()}
        cfg = model.config.to_dict()
        sch = schema.to_dict()
        for j in range(n):
            expected = hierrec_reference(
                weights, cfg, sch, int(batch.scenario_ids[j]), list(batch.common_ids[j])
            )
            assert abs(trace.predictions[j] - expected) < atol, j

    def test_matches_reference_on_many_inputs(self, schema, model):
        self._compare(model, schema, n=120, seed=21)

    def test_matches_reference_with_bn_and_depth(self, schema):
        cfg = tiny_hierrec_config()
        cfg.global_fc = FcStackConfig([12, 8, 6], "relu", use_batch_norm=True)
        cfg.attention_fc = FcStackConfig([3, 5, 8], "tanh")
        model = HierRecModel(cfg, schema, seed=9)
        # move BN running stats off their init values first
        for i in range(5):
            model.forward(tiny_batch(schema, n=16, seed=30 + i), mode="train")
        self._compare(model, schema, n=40, seed=22)

    def test_matches_reference_under_ablations(self, schema):
        for flags in (
            {"ablate_explicit": True},
            {"ablate_implicit": True},
            {"ablate_multi_head": True},
        ):
            cfg = tiny_hierrec_config()
            for k, v in flags.items():
                setattr(cfg, k, v)
            if flags.get("ablate_multi_head"):
                cfg.attention_fc = None
            model = HierRecModel(cfg, schema, seed=5)
            self._compare(model, schema, n=30, seed=23)


class TestBackwardState:
    def test_backward_without_tape_raises(self, schema, model):
        batch = tiny_batch(schema, n=4, seed=1)
        trace = model.forward(batch, mode="eval")
        trace._pred_var = None
        with pytest.raises(StateError):
            model.backward(trace, batch.labels)

    def test_backward_requires_train_mode(self, schema, model):
        batch = tiny_batch(schema, n=4, seed=1)
        trace = model.forward(batch, mode="eval")
        with pytest.raises(StateError):
            model.backward(trace, batch.labels)


class TestCheckpoint:
    def test_roundtrip_bitwise_float32(self, tmp_path, schema, model):
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        again = load_checkpoint(path)
        assert again.kind == "hierrec"
        for name, entry in model.store.entries.items():
            np.testing.assert_array_equal(
                again.store.value(name).astype(np.float32),
                entry.value.astype(np.float32),
            )

    def test_double_save_identical_bytes(self, tmp_path, schema, model):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(model, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_forward_parity_after_reload(self, tmp_path, schema, model):
        batch = tiny_batch(schema, n=12, seed=8)
        before = model.forward(batch).predictions
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        after = load_checkpoint(path).forward(batch).predictions
        np.testing.assert_allclose(after, before, rtol=1e-6)

    def test_unknown_version_rejected(self, tmp_path, schema, model):
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="format_version"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path, schema, model):
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        path.write_text(path.read_text()[: len(path.read_text()) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_missing_tensor_rejected(self, tmp_path, schema, model):
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        doc = json.loads(path.read_text())
        doc["tensors"].pop("head.w")
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="head.w"):
            load_checkpoint(path)


class TestAttentionExport:
    def test_untrained_uniform_and_group_sums(self, tmp_path, schema, model):
        model.store.get("attention.l0.w").value[:] = 0.0
        model.store.get("attention.l0.b").value[:] = 0.0
        path = tmp_path / "attn.csv"
        export_attention_weights(model, path)
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == schema.scenario_cardinality * 2 * 4  # S * heads * I
        groups = {}
        for r in rows:
            assert float(r["weight"]) == pytest.approx(0.25, abs=1e-12)
            groups.setdefault((r["scenario_id"], r["head"]), 0.0)
            groups[(r["scenario_id"], r["head"])] += float(r["weight"])
        for total in groups.values():
            assert total == pytest.approx(1.0, abs=1e-6)
        assert {r["feature"] for r in rows} == set(schema.common_field_names)
