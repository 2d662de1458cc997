import numpy as np
import pytest

from chimera.autodiff import Tensor
from chimera.parsing import EventSequence
from chimera.training import (
    AdamW,
    TrainConfig,
    choose_threshold,
    clip_gradients,
    split_dataset,
    train,
)


def _sequences(n_windows, n=6, vocab=8, anomaly_every=3, seed=0):
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(n_windows):
        ids = rng.integers(0, vocab, size=n).tolist()
        flags = [False] * n
        label = i % anomaly_every == 0
        if label:
            ids[2] = vocab  # dedicated "trigger" event id
            flags[2] = True
        seqs.append(EventSequence(event_ids=ids, positions=list(range(i * n + 1, i * n + n + 1)),
                                  seq_label=label, root_cause_flags=flags))
    return seqs


class TestSplitDataset:
    def test_100_sequences_60_30_10(self):
        seqs = _sequences(100)
        train_s, test_s, val_s = split_dataset(seqs, (0.6, 0.3, 0.1), seed=0)
        assert (len(train_s), len(test_s), len(val_s)) == (60, 30, 10)

    def test_exact_small_division(self):
        seqs = _sequences(10)
        train_s, test_s, val_s = split_dataset(seqs, (6, 3, 1), seed=0)
        assert (len(train_s), len(test_s), len(val_s)) == (6, 3, 1)

    def test_partition_disjoint_and_complete(self):
        seqs = _sequences(47)
        parts = split_dataset(seqs, (0.6, 0.3, 0.1), seed=5)
        seen = [id(s) for part in parts for s in part]
        assert len(seen) == 47
        assert len(set(seen)) == 47

    def test_same_seed_same_partition(self):
        seqs = _sequences(30)
        a = split_dataset(seqs, (0.6, 0.3, 0.1), seed=9)
        b = split_dataset(seqs, (0.6, 0.3, 0.1), seed=9)
        for pa, pb in zip(a, b):
            assert [id(s) for s in pa] == [id(s) for s in pb]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            split_dataset([], (0.6, 0.3, 0.1), seed=0)


class TestAdamW:
    def _opt(self, params, **kw):
        cfg = TrainConfig(**kw)
        return AdamW(params, cfg)

    def test_zero_grad_zero_decay_unchanged(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        opt = self._opt({"p": p}, weight_decay=0.0)
        opt.step({p: np.zeros(2)})
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_is_normalized_gradient(self):
        # with bias correction, step one moves by lr * g / (|g| + eps)
        p = Tensor([1.0, 1.0], requires_grad=True)
        g = np.array([0.3, -0.008])
        lr = 1e-3
        opt = self._opt({"p": p}, learning_rate=lr, weight_decay=0.0)
        opt.step({p: g})
        expected = np.array([1.0, 1.0]) - lr * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-15)

    def test_decay_only(self):
        p = Tensor([2.0], requires_grad=True)
        lr, wd = 1e-2, 0.5
        opt = self._opt({"p": p}, learning_rate=lr, weight_decay=wd)
        opt.step({})
        assert p.data[0] == pytest.approx(2.0 * (1 - lr * wd), abs=1e-15)

    def test_second_step_hand_computation(self):
        p = Tensor([0.0], requires_grad=True)
        g1, g2 = np.array([1.0]), np.array([-0.5])
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        opt = self._opt({"p": p}, learning_rate=lr, weight_decay=0.0)
        opt.step({p: g1})
        opt.step({p: g2})

        m = (1 - b1) * g1
        v = (1 - b2) * g1**2
        x = -lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2**2
        x -= lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
        np.testing.assert_allclose(p.data, x, rtol=0, atol=1e-15)

    def test_nan_gradient_reports_name(self):
        p = Tensor([1.0], requires_grad=True)
        opt = self._opt({"enc.w": p})
        with pytest.raises(FloatingPointError, match="enc.w"):
            opt.step({p: np.array([np.nan])})


class TestClipGradients:
    def test_below_threshold_untouched(self):
        g = {Tensor([1.0]): np.array([3.0]), Tensor([1.0]): np.array([4.0])}
        norm = clip_gradients(g, max_norm=6.0)
        assert norm == pytest.approx(5.0)
        total = np.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
        assert total == pytest.approx(5.0)

    def test_above_threshold_scaled(self):
        g = {Tensor([1.0]): np.array([30.0]), Tensor([1.0]): np.array([40.0])}
        clip_gradients(g, max_norm=5.0)
        total = np.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
        assert total == pytest.approx(5.0)


class TestChooseThreshold:
    def test_separable(self):
        probs = np.array([0.1, 0.2, 0.8, 0.9])
        labels = np.array([False, False, True, True])
        t, f1 = choose_threshold(probs, labels)
        assert f1 == 1.0
        assert 0.2 < t < 0.8

    def test_fallback_without_positives(self):
        t, f1 = choose_threshold(np.array([0.3, 0.4]), np.array([False, False]))
        assert (t, f1) == (0.5, 0.0)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        probs = rng.random(50)
        labels = rng.random(50) > 0.6
        a = choose_threshold(probs, labels)
        b = choose_threshold(probs, labels)
        assert a == b


class TestTrainConfig:
    def test_defaults_valid(self):
        TrainConfig().validate()

    def test_field_level_message(self):
        cfg = TrainConfig(learning_rate=-1.0, batch_size=0)
        with pytest.raises(ValueError, match="learning_rate"):
            cfg.validate()
        with pytest.raises(ValueError, match="batch_size"):
            cfg.validate()

    def test_ablation_lambdas(self):
        cfg = TrainConfig(disable_ilrl=True)
        assert cfg.effective_lambdas() == (1.0, 2.0, 0.0, 0.5)
        cfg = TrainConfig(disable_cda=True)
        assert cfg.effective_lambdas() == (1.0, 2.0, 0.001, 0.0)

    def test_split_ratios_normalized(self):
        cfg = TrainConfig(split_train=6, split_test=3, split_val=1)
        assert cfg.split_ratios() == pytest.approx((0.6, 0.3, 0.1))


class TestTrainLoop:
    CFG = dict(epochs=2, min_epochs=1, batch_size=8, embedding_dim=6, hidden=8)

    def test_zero_lambdas_leave_parameters_unchanged(self):
        seqs = _sequences(40)
        cfg = TrainConfig(lambda_detector=0, lambda_localizer=0,
                          lambda_disentangle=0, lambda_align=0, **self.CFG)
        res = train(seqs, cfg)
        fresh = train(seqs, cfg)  # determinism aside, weights must equal init
        # re-derive the init by running with zero epochs of effect: compare two runs
        for name in res.params.named_parameters():
            np.testing.assert_array_equal(res.params.named_parameters()[name].data,
                                          fresh.params.named_parameters()[name].data)
        # and the loss history must be exactly zero
        assert all(h["total"] == 0.0 for h in res.history)

    def test_equal_seeds_bit_identical_checkpoints(self, tmp_path):
        seqs = _sequences(60)
        cfg = TrainConfig(seed=3, **self.CFG)
        a = train(seqs, cfg, out_dir=tmp_path / "a")
        b = train(seqs, cfg, out_dir=tmp_path / "b")
        ca = (tmp_path / "a" / "best.ckpt").read_bytes()
        cb = (tmp_path / "b" / "best.ckpt").read_bytes()
        assert ca == cb

    def test_ablation_components_exactly_zero(self):
        seqs = _sequences(40)
        res = train(seqs, TrainConfig(disable_cda=True, disable_ilrl=True, **self.CFG))
        assert all(h["align"] == 0.0 for h in res.history)
        assert all(h["disentangle"] == 0.0 for h in res.history)

    def test_single_class_batches_counted(self):
        seqs = _sequences(16, anomaly_every=100)  # only window 0 anomalous
        cfg = TrainConfig(seed=1, **self.CFG)
        res = train(seqs, cfg)
        assert all(h["skipped_single_class_batches"] >= 1 for h in res.history)

    def test_training_log_and_checkpoints_written(self, tmp_path):
        seqs = _sequences(40)
        res = train(seqs, TrainConfig(**self.CFG), out_dir=tmp_path)
        assert (tmp_path / "training_log.jsonl").exists()
        assert (tmp_path / "epoch_1.ckpt").exists()
        assert (tmp_path / "best.ckpt").exists()
        assert res.checkpoint_path == tmp_path / "best.ckpt"

    def test_loss_decreases_on_separable_data(self):
        seqs = _sequences(120, seed=5)
        cfg = TrainConfig(epochs=12, min_epochs=12, patience=12, batch_size=16,
                          embedding_dim=8, hidden=12, seed=2)
        res = train(seqs, cfg)
        first, last = res.history[0]["total"], res.history[-1]["total"]
        assert last < first


class TestPretrainedVectors:
    def test_frozen_table_survives_training(self, tmp_path):
        import json

        rng = np.random.default_rng(7)
        vectors = {tid: rng.normal(size=6).tolist() for tid in range(9)}
        path = tmp_path / "vectors.jsonl"
        path.write_text("\n".join(json.dumps({"template_id": t, "vector": v})
                                  for t, v in vectors.items()) + "\n")
        seqs = _sequences(40)
        cfg = TrainConfig(epochs=2, min_epochs=1, batch_size=8, hidden=8, seed=1)
        res = train(seqs, cfg, pretrained_vectors=path)
        table = res.params.table
        assert not table.requires_grad
        for tid, vec in vectors.items():
            np.testing.assert_array_equal(table.data[res.params.vocab.index[tid]], vec)
        # other parameters did move
        assert res.history[-1]["total"] != res.history[0]["total"]


class TestLossMonotonicity:
    def test_total_loss_non_increasing_for_most_seeds(self, tmp_path):
        # Invariant over a seed set: the per-epoch training loss curve is
        # non-increasing for at least 90% of seeds on the synthetic corpus.
        from chimera.datagen import CorpusSpec, generate_corpus
        from chimera.parsing import ParseTree, load_records, parse_records, window_sequences

        art = generate_corpus(CorpusSpec(num_templates=30, num_lines=4000, seed=11),
                              tmp_path)
        records = load_records(art.log_path, art.label_path)
        tree = ParseTree()
        ids = parse_records(tree, records)
        seqs = window_sequences(records, ids, n=20)

        monotone = 0
        for seed in range(10):
            cfg = TrainConfig(seed=seed, epochs=6, min_epochs=6, patience=6,
                              hidden=32, embedding_dim=16)
            res = train(seqs, cfg)
            totals = [h["total"] for h in res.history]
            monotone += all(b <= a for a, b in zip(totals, totals[1:]))
        assert monotone >= 9
