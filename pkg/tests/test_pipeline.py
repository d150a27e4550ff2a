import csv

import numpy as np
import pytest

from protoadapt import data as D
from protoadapt import network as N
from protoadapt import pipeline as P


@pytest.fixture(scope="module")
def tiny_domains():
    spec = D.SynthSpec(class_count=3, seed=21)
    source = D.synth_generate(spec, 6, D.SOURCE)
    target = D.synth_generate(spec, 4, D.TARGET)
    return source, target


def tiny_cfg(**kw):
    base = dict(variant=P.FPM, epochs=1, fine_tune_epochs=1, n_shot=2,
                seed=0, batch_size=8, pair_batch_size=8)
    base.update(kw)
    return P.TrainConfig(**base)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            P.TrainConfig(variant="XYZ")
        with pytest.raises(ValueError):
            P.TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            P.TrainConfig(epochs=-1)
        with pytest.raises(ValueError):
            P.TrainConfig(n_shot=-2)
        with pytest.raises(ValueError):
            P.TrainConfig(positive_fraction=1.5)

    def test_defaults(self):
        cfg = P.TrainConfig()
        assert cfg.variant == P.FPM
        assert cfg.batch_size == 64
        assert cfg.loss.lambda_ == 0.5


class TestTrain:
    def test_zero_epochs_returns_initial_model(self, tiny_domains):
        source, target = tiny_domains
        cfg = tiny_cfg(epochs=0, fine_tune_epochs=0)
        few, _ = D.select_few_shot(target, cfg.n_shot, cfg.seed)
        model = P.train(source, few, cfg)
        init = P.initial_model_for(cfg, source.class_count)
        for a, b in zip(model.trainable(), init.trainable()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_same_seed_reproduces_weights(self, tiny_domains):
        source, target = tiny_domains
        cfg = tiny_cfg()
        few, _ = D.select_few_shot(target, cfg.n_shot, cfg.seed)
        a = P.train(source, few, cfg)
        b = P.train(source, few, cfg)
        for ta, tb in zip(a.trainable(), b.trainable()):
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_different_seed_differs(self, tiny_domains):
        source, target = tiny_domains
        few, _ = D.select_few_shot(target, 2, 0)
        a = P.train(source, few, tiny_cfg(seed=0))
        b = P.train(source, few, tiny_cfg(seed=1))
        assert not np.array_equal(a.fc_weight.data, b.fc_weight.data)

    def test_ctm_trains_without_target(self, tiny_domains):
        source, _ = tiny_domains
        log = P.TrainingLog()
        cfg = tiny_cfg(variant=P.CTM, n_shot=0, fine_tune_epochs=0)
        model = P.train(source, None, cfg, log)
        assert model.head == N.TRADITIONAL
        assert len(log.epoch_total) == 1
        assert all(v == 0.0 for v in log.epoch_distance)

    def test_pair_variants_record_distance_loss(self, tiny_domains):
        source, target = tiny_domains
        few, _ = D.select_few_shot(target, 2, 0)
        log = P.TrainingLog()
        P.train(source, few, tiny_cfg(), log)
        assert len(log.epoch_distance) == 1
        assert log.epoch_distance[0] > 0.0
        assert log.epoch_classification[0] > 0.0

    def test_ftm_fpm_require_few_shot(self, tiny_domains):
        source, _ = tiny_domains
        with pytest.raises(ValueError):
            P.train(source, None, tiny_cfg(variant=P.FTM))

    def test_empty_source_rejected(self, tiny_domains):
        source, target = tiny_domains
        few, _ = D.select_few_shot(target, 2, 0)
        with pytest.raises(ValueError):
            P.train(D.empty_like(source), few, tiny_cfg())

    def test_injected_model_head_must_match_variant(self, tiny_domains):
        source, target = tiny_domains
        few, _ = D.select_few_shot(target, 2, 0)
        cfg = tiny_cfg(variant=P.FPM)
        wrong = N.init_model(class_count=3, head=N.TRADITIONAL, seed=0)
        with pytest.raises(ValueError):
            P.train(source, few, cfg, initial_model=wrong)

    def test_prototype_snapshots_logged(self, tiny_domains):
        source, target = tiny_domains
        few, _ = D.select_few_shot(target, 2, 0)
        log = P.TrainingLog()
        P.train(source, few, tiny_cfg(), log)
        assert log.prototypes_initial.shape == (3, N.PROTO_DIM)
        assert log.prototypes_final.shape == (3, N.PROTO_DIM)
        assert not np.array_equal(log.prototypes_initial, log.prototypes_final)
        assert log.optimizer_state is not None


class TestFineTune:
    def test_zero_epochs_is_identity(self, tiny_domains):
        source, target = tiny_domains
        cfg = tiny_cfg(fine_tune_epochs=0)
        few, _ = D.select_few_shot(target, cfg.n_shot, cfg.seed)
        model = P.train(source, few, cfg)
        before = [t.data.copy() for t in model.trainable()]
        tuned = P.fine_tune(model, few, cfg, P.TrainingLog())
        for b, t in zip(before, tuned.trainable()):
            np.testing.assert_array_equal(b, t.data)

    def test_moves_weights_and_lowers_few_shot_loss(self, tiny_domains):
        source, target = tiny_domains
        cfg = tiny_cfg(fine_tune_epochs=12)
        few, _ = D.select_few_shot(target, cfg.n_shot, cfg.seed)
        model = P.train(source, few, cfg)
        protos_before = model.prototypes.data.copy()
        log = P.TrainingLog()
        tuned = P.fine_tune(model, few, cfg, log)
        assert not np.array_equal(tuned.prototypes.data, protos_before)
        assert log.epoch_total[-1] < log.epoch_total[0]

    def test_head_only_freezes_trunk(self, tiny_domains):
        source, target = tiny_domains
        cfg = tiny_cfg(fine_tune_epochs=3, fine_tune_head_only=True)
        few, _ = D.select_few_shot(target, cfg.n_shot, cfg.seed)
        model = P.train(source, few, cfg)
        trunk_before = [w.data.copy() for w in model.conv_weights]
        fc_before = model.fc_weight.data.copy()
        protos_before = model.prototypes.data.copy()
        tuned = P.fine_tune(model, few, cfg, P.TrainingLog())
        for b, w in zip(trunk_before, tuned.conv_weights):
            np.testing.assert_array_equal(b, w.data)
        np.testing.assert_array_equal(fc_before, tuned.fc_weight.data)
        assert not np.array_equal(tuned.prototypes.data, protos_before)


class TestEvaluate:
    def test_confusion_accounts_for_every_window(self, tiny_domains):
        source, target = tiny_domains
        model, rep, few, rest = P.run_experiment(source, target, tiny_cfg(),
                                                 P.TrainingLog())
        assert rep.confusion.sum() == len(rest)
        assert rep.confusion.shape == (3, 3)
        assert 0.0 <= rep.accuracy <= 1.0
        diag = np.trace(rep.confusion)
        assert rep.accuracy == pytest.approx(diag / len(rest))

    def test_per_class_accuracy_nan_for_absent(self, tiny_domains):
        source, target = tiny_domains
        cfg = tiny_cfg()
        few, rest = D.select_few_shot(target, cfg.n_shot, cfg.seed)
        model = P.train(source, few, cfg)
        only_two = rest.subset(np.flatnonzero(rest.labels_array() != 0))
        rep = P.evaluate(model, only_two)
        assert np.isnan(rep.per_class_accuracy[0])
        assert not np.isnan(rep.per_class_accuracy[1])

    def test_class_count_mismatch_raises(self, tiny_domains):
        source, target = tiny_domains
        model = N.init_model(class_count=5, head=N.PROTOTYPICAL, seed=0)
        with pytest.raises(ValueError):
            P.evaluate(model, target)

    def test_empty_dataset_raises(self, tiny_domains):
        _, target = tiny_domains
        model = N.init_model(class_count=3, head=N.PROTOTYPICAL, seed=0)
        with pytest.raises(ValueError):
            P.evaluate(model, D.empty_like(target))

    def test_predict_chunking_consistent(self, tiny_domains):
        source, _ = tiny_domains
        model = N.init_model(class_count=3, head=N.PROTOTYPICAL, seed=0)
        vals = source.values_matrix()
        whole = P.predict(model, vals)
        parts = np.concatenate([P.predict(model, vals[:7]),
                                P.predict(model, vals[7:])])
        np.testing.assert_array_equal(whole, parts)

    def test_evaluate_is_deterministic(self, tiny_domains):
        source, target = tiny_domains
        model = N.init_model(class_count=3, head=N.PROTOTYPICAL, seed=3)
        a = P.evaluate(model, target)
        b = P.evaluate(model, target)
        assert a.accuracy == b.accuracy
        np.testing.assert_array_equal(a.confusion, b.confusion)


class TestRelabelingEquivariance:
    def test_symmetric_relabeling_is_bit_exact(self, tiny_domains):
        source, target = tiny_domains
        cfg = tiny_cfg(epochs=1, fine_tune_epochs=2)
        perm = [2, 0, 1]

        def full_run(src, tgt, init):
            few, rest = D.select_few_shot(tgt, cfg.n_shot, cfg.seed)
            log = P.TrainingLog()
            model = P.train(src, few, cfg, log, initial_model=init)
            model = P.fine_tune(model, few, cfg, log)
            return model, P.evaluate(model, rest)

        init = P.initial_model_for(cfg, source.class_count)
        base_model, base_rep = full_run(source, target, init)

        init_p = N.permute_class_parameters(init, perm)
        model_p, rep_p = full_run(D.permute_labels(source, perm),
                                  D.permute_labels(target, perm), init_p)

        assert rep_p.accuracy == base_rep.accuracy   # bit-for-bit
        perm_arr = np.asarray(perm)
        np.testing.assert_array_equal(
            rep_p.confusion[perm_arr][:, perm_arr], base_rep.confusion)
        np.testing.assert_array_equal(
            model_p.prototypes.data[perm_arr], base_model.prototypes.data)

    def test_traditional_head_relabeling_is_bit_exact(self, tiny_domains):
        source, target = tiny_domains
        cfg = tiny_cfg(variant=P.FTM, epochs=1, fine_tune_epochs=1)
        perm = [1, 2, 0]

        def full_run(src, tgt, init):
            few, rest = D.select_few_shot(tgt, cfg.n_shot, cfg.seed)
            log = P.TrainingLog()
            model = P.train(src, few, cfg, log, initial_model=init)
            model = P.fine_tune(model, few, cfg, log)
            return P.evaluate(model, rest)

        init = P.initial_model_for(cfg, source.class_count)
        base = full_run(source, target, init)
        rep_p = full_run(D.permute_labels(source, perm),
                         D.permute_labels(target, perm),
                         N.permute_class_parameters(init, perm))
        assert rep_p.accuracy == base.accuracy


class TestExportFeatures:
    def test_csv_round_trips_full_precision(self, tiny_domains, tmp_path):
        source, target = tiny_domains
        model = N.init_model(class_count=3, head=N.PROTOTYPICAL, seed=1)
        path, proto_path = P.export_features(model, [target], tmp_path / "f.csv")
        with open(path) as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        assert header[:2] == ["domain", "true_label"]
        assert len(header) == 2 + N.FEATURE_DIM + N.PROTO_DIM
        assert len(body) == len(target)

        # recompute with the same chunk shape the export used: BLAS results
        # differ in the last ulp across batch shapes, %.17g preserves them
        feats = N.extract_features(model, target.values_matrix()).data[0]
        got = np.array([float(v) for v in body[0][2:2 + N.FEATURE_DIM]])
        np.testing.assert_array_equal(got, feats)

        with open(proto_path) as fh:
            proto_rows = list(csv.reader(fh))
        assert len(proto_rows) == 1 + 3
        got_proto = np.array([[float(v) for v in r[1:]]
                              for r in proto_rows[1:]])
        np.testing.assert_array_equal(got_proto, model.prototypes.data)

    def test_traditional_model_rejected(self, tiny_domains, tmp_path):
        _, target = tiny_domains
        model = N.init_model(class_count=3, head=N.TRADITIONAL, seed=1)
        with pytest.raises(ValueError):
            P.export_features(model, [target], tmp_path / "f.csv")


class TestRunExperiment:
    def test_ctm_with_zero_shot(self, tiny_domains):
        source, target = tiny_domains
        cfg = tiny_cfg(variant=P.CTM, n_shot=0, fine_tune_epochs=0, epochs=1)
        model, rep, few, rest = P.run_experiment(source, target, cfg,
                                                 P.TrainingLog())
        assert few is None
        assert len(rest) == len(target)
        assert rep.confusion.sum() == len(target)

    def test_fpm_partition_and_report(self, tiny_domains):
        source, target = tiny_domains
        model, rep, few, rest = P.run_experiment(source, target, tiny_cfg(),
                                                 P.TrainingLog())
        assert len(few) == 3 * 2
        assert len(rest) == len(target) - 6
        assert model.head == N.PROTOTYPICAL

    def test_min_pairwise_l1(self):
        protos = np.array([[0.0, 0.0], [1.0, 1.0], [3.0, 0.0]])
        # closest pair is rows 0 and 1 at L1 distance 2
        assert P.min_pairwise_l1(protos) == pytest.approx(2.0)
