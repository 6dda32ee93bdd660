"""Phase orchestration: source training, adaptation, self-training, ablation."""

from dataclasses import replace

import numpy as np
import pytest

import prsfda.pipeline as pipeline
from conftest import brute_force_iou
from prsfda.data import Dataset, generate_pair
from prsfda.errors import (
    ConfigError,
    EmptyEvaluationError,
    MissingLabelsError,
    NoSignalError,
    PartialResultsError,
    TrainingError,
)
from prsfda.model import ModelConfig, init_model, model_hash
from prsfda.numerics import softmax
from prsfda.pipeline import (
    ABLATION_ARMS,
    LAMBDA_SWEEP,
    PhaseConfig,
    adapt_unsupervised,
    config_hash,
    evaluate,
    naive_self_train,
    run_ablation,
    self_train_plnl,
    train_source,
)


class LinearPixelModel:
    """Minimal opaque model handle: per-pixel softmax of a channel-linear map.

    Exposes exactly forward / backward / parameters / lr_multipliers — the
    interface the adaptation phases are allowed to rely on.
    """

    def __init__(self, num_classes, in_channels=3, seed=0):
        rng = np.random.default_rng(seed)
        self.w = rng.normal(scale=0.1, size=(in_channels, num_classes))
        self.b = np.zeros(num_classes)

    def parameters(self):
        return [self.w, self.b]

    def lr_multipliers(self):
        return [1.0, 1.0]

    def forward(self, image):
        return softmax(np.asarray(image) @ self.w + self.b)

    def backward(self, image, grad_wrt_probs):
        probs = self.forward(image)
        delta = probs * (grad_wrt_probs - np.sum(grad_wrt_probs * probs, axis=2,
                                                 keepdims=True))
        x = np.asarray(image).reshape(-1, self.w.shape[0])
        d = delta.reshape(-1, self.w.shape[1])
        return [x.T @ d, d.sum(axis=0)]


class TrapDataset:
    """Label-free view whose label access trips an assertion."""

    def __init__(self, images):
        self.images = list(images)
        self.has_labels = False

    def __len__(self):
        return len(self.images)

    @property
    def labels(self):
        raise AssertionError("training entry point touched target labels")


class TestPhaseConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            PhaseConfig(source_epochs=0)
        with pytest.raises(ConfigError):
            PhaseConfig(confidence_threshold=1.5)
        with pytest.raises(ConfigError):
            PhaseConfig(lambda_nl=-0.1)
        with pytest.raises(ConfigError):
            PhaseConfig(regularizer="kl")

    def test_round_trip_and_unknown_field(self):
        cfg = PhaseConfig(seed=4)
        assert PhaseConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            PhaseConfig.from_dict({"epochs": 3})

    def test_config_hash_stability(self, tiny_spec, tiny_cfg):
        assert config_hash(tiny_spec, tiny_cfg) == config_hash(tiny_spec, tiny_cfg)
        assert config_hash(tiny_spec, tiny_cfg) != config_hash(
            tiny_spec, replace(tiny_cfg, seed=1))


class TestTrainSource:
    def test_requires_labels(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        with pytest.raises(MissingLabelsError):
            train_source(pair.target_train, tiny_cfg)

    def test_deterministic(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        m1, r1 = train_source(pair.source_train, tiny_cfg, num_classes=4)
        m2, r2 = train_source(pair.source_train, tiny_cfg, num_classes=4)
        assert model_hash(m1) == model_hash(m2)
        assert r1.loss_curve == r2.loss_curve

    def test_beats_chance_on_source_val(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        cfg = replace(tiny_cfg, source_epochs=6)
        _, record = train_source(pair.source_train, cfg, num_classes=4,
                                 source_val=pair.source_val)
        assert record.report.miou > 1.0 / tiny_spec.num_classes

    def test_checkpoint_written(self, tmp_path, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        path = tmp_path / "src.ckpt"
        _, record = train_source(pair.source_train, tiny_cfg, num_classes=4,
                                 checkpoint_path=path)
        assert path.exists()
        assert record.checkpoint_path == str(path)


class TestAdaptUnsupervised:
    def test_rejects_labeled_dataset(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        model, _ = train_source(pair.source_train, tiny_cfg, num_classes=4)
        with pytest.raises(ConfigError):
            adapt_unsupervised(model, pair.target_eval, tiny_cfg)

    def test_records_confidence(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        model, _ = train_source(pair.source_train, tiny_cfg, num_classes=4)
        _, record = adapt_unsupervised(model, pair.target_train.images_only(), tiny_cfg)
        assert 0.0 < record.extras["conf_before"] <= 1.0
        assert 0.0 < record.extras["conf_after"] <= 1.0
        assert record.phase == "adapt_msl"

    def test_ent_and_msl_produce_distinct_models(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        model, _ = train_source(pair.source_train, tiny_cfg, num_classes=4)
        from prsfda.model import clone_model

        msl, _ = adapt_unsupervised(clone_model(model),
                                    pair.target_train.images_only(), tiny_cfg)
        ent, _ = adapt_unsupervised(clone_model(model),
                                    pair.target_train.images_only(),
                                    replace(tiny_cfg, regularizer="ent"))
        assert model_hash(msl) != model_hash(ent)


class TestSelfTrain:
    def test_pseudo_fixed_comp_varying(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        model, _ = train_source(pair.source_train,
                                replace(tiny_cfg, source_epochs=4), num_classes=4)
        cfg = replace(tiny_cfg, selftrain_epochs=3)
        _, record = self_train_plnl(model, pair.target_train.images_only(), cfg)
        assert len(record.extras["pseudo_hashes"]) == len(pair.target_train)
        assert len(set(record.extras["comp_hashes"])) > 1

    def test_no_signal_error(self, tiny_spec, tiny_cfg):
        # A zero-initialized model is uniform everywhere: confidence 1/C < 0.6,
        # so every pixel is invalid; with lambda 0 there is nothing to learn.
        pair = generate_pair(tiny_spec)
        model = init_model(ModelConfig(num_classes=4, hidden_sizes=(8,)), 0,
                           zero_init=True)
        with pytest.raises(NoSignalError):
            self_train_plnl(model, pair.target_train.images_only(),
                            replace(tiny_cfg, lambda_nl=0.0))

    def test_naive_logs_valid_fractions(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        model, _ = train_source(pair.source_train, tiny_cfg, num_classes=4)
        cfg = replace(tiny_cfg, selftrain_epochs=2)
        _, record = naive_self_train(model, pair.target_train.images_only(), cfg)
        assert len(record.extras["valid_fractions"]) == 2
        assert all(0.0 <= f <= 1.0 for f in record.extras["valid_fractions"])

    def test_deterministic(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        model, _ = train_source(pair.source_train, tiny_cfg, num_classes=4)
        from prsfda.model import clone_model

        m1, _ = self_train_plnl(clone_model(model),
                                pair.target_train.images_only(), tiny_cfg)
        m2, _ = self_train_plnl(clone_model(model),
                                pair.target_train.images_only(), tiny_cfg)
        assert model_hash(m1) == model_hash(m2)


class TestSourceFreeness:
    def test_mock_model_runs_phases_1_and_2(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        view = pair.target_train.images_only()
        model = LinearPixelModel(num_classes=4)
        model, rec1 = adapt_unsupervised(model, view, tiny_cfg)
        assert len(rec1.loss_curve) == tiny_cfg.adapt_epochs
        model, rec2 = self_train_plnl(model, view, tiny_cfg)
        assert len(rec2.loss_curve) == tiny_cfg.selftrain_epochs
        model, rec3 = naive_self_train(model, view, tiny_cfg)
        assert len(rec3.loss_curve) == tiny_cfg.selftrain_epochs

    def test_sentinel_labels_never_touched(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        trap = TrapDataset(pair.target_train.images)
        model, _ = train_source(pair.source_train, tiny_cfg, num_classes=4)
        model, _ = adapt_unsupervised(model, trap, tiny_cfg)
        model, _ = self_train_plnl(model, trap, tiny_cfg)
        model, _ = naive_self_train(model, trap, tiny_cfg)


class TestEvaluate:
    def test_matches_brute_force(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        model, _ = train_source(pair.source_train, tiny_cfg, num_classes=4)
        report = evaluate(model, pair.target_eval)
        preds = [np.argmax(model.forward(img), axis=2) for img in pair.target_eval.images]
        ref_per_class, ref_miou = brute_force_iou(
            np.concatenate([p.ravel() for p in preds]),
            np.concatenate([g.ravel() for g in pair.target_eval.labels]), 4)
        assert report.miou == pytest.approx(ref_miou, abs=1e-12)

    def test_deterministic(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        model, _ = train_source(pair.source_train, tiny_cfg, num_classes=4)
        a, b = evaluate(model, pair.target_eval), evaluate(model, pair.target_eval)
        assert a.to_json() == b.to_json()

    def test_uniform_model_on_balanced_two_class(self):
        # A zero-init model predicts class 0 everywhere (argmax tie-break), so
        # on balanced two-class data IoU = (0.5, 0), mIoU = 0.25 — consistent
        # with the random-partition level 1/3 +- 0.1.
        rng = np.random.default_rng(0)
        images = [rng.uniform(size=(8, 8, 3)) for _ in range(4)]
        labels = [(np.arange(64).reshape(8, 8) % 2) for _ in range(4)]
        ds = Dataset(images, labels, "target")
        model = init_model(ModelConfig(num_classes=2, hidden_sizes=(4,)), 0,
                           zero_init=True)
        report = evaluate(model, ds)
        assert abs(report.miou - 1.0 / 3.0) <= 0.1

    def test_requires_labels_and_non_empty(self, tiny_spec, tiny_cfg):
        pair = generate_pair(tiny_spec)
        model, _ = train_source(pair.source_train, tiny_cfg, num_classes=4)
        with pytest.raises(MissingLabelsError):
            evaluate(model, pair.target_train)
        with pytest.raises(EmptyEvaluationError):
            evaluate(model, Dataset([], [], "target"))


class TestRunAblation:
    def test_tiny_ablation_end_to_end(self, tmp_path, tiny_spec, tiny_cfg):
        result = run_ablation(tiny_spec, tiny_cfg, tmp_path, seeds=[0])
        assert set(result.arm_means) == set(ABLATION_ARMS)
        assert set(result.lambda_means) == {str(l) for l in LAMBDA_SWEEP}
        assert (tmp_path / "ablation.csv").exists()
        assert (tmp_path / "lambda.csv").exists()
        # Downstream arms branch from the shared upstream checkpoints.
        st_record = result.records[("SO+AUG+MSL+ST", 0)]
        assert st_record.extras["base_checkpoint"].endswith("msl.ckpt")
        nlpl_record = result.records[("SO+AUG+MSL+NLPL", 0)]
        assert nlpl_record.extras["base_checkpoint"].endswith("msl.ckpt")
        # Every row carries the config hash.
        chash = config_hash(tiny_spec, tiny_cfg)
        lines = (tmp_path / "ablation.csv").read_text().strip().splitlines()
        assert all(line.endswith(chash) for line in lines[1:])

    def test_partial_results_error(self, tmp_path, tiny_spec, tiny_cfg, monkeypatch):
        def boom(*args, **kwargs):
            raise TrainingError("synthetic failure")

        monkeypatch.setattr(pipeline, "naive_self_train", boom)
        with pytest.raises(PartialResultsError) as exc:
            run_ablation(tiny_spec, tiny_cfg, tmp_path, seeds=[0])
        assert "SO+AUG+MSL" in exc.value.completed
