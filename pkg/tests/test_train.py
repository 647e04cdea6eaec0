import json
import pytest
import numpy as np
from app.errors import CheckpointError, TrainingDivergedError
from app.reranker.checkpoint import checkpoint_dict, load_checkpoint, save_checkpoint
from app.reranker.features import FEATURE_DIM, FeatureVector
from app.reranker.model import SHARED, AgentIds, RerankerParams, TrainingExample, bce_loss_and_grad, score
from app.reranker.train import OptimizerConfig, fit, train

def separable_examples(n=200, seed=0):
    """Label is 1 exactly when feature 1 is positive"""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        x = rng.normal(size=FEATURE_DIM)
        x[-1] = 1.0
        ids = AgentIds("t1", "m1") if i % 2 else AgentIds("t2", "m2")
        examples.append(TrainingExample(ids, FeatureVector(x), int(x[1] > 0)))
    return examples

def margin_examples(n=120, seed=0):
    """Label is the sign of feature 1, kept at least 1.0 away from zero"""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        x = rng.normal(scale=0.3, size=FEATURE_DIM)
        label = i % 2
        x[1] = (1.0 + abs(rng.normal())) * (1 if label else -1)
        ids = AgentIds("t1", "m1") if i % 3 else AgentIds("t2", "m2")
        examples.append(TrainingExample(ids, FeatureVector(x), label))
    return examples

class TestFit:
    """Test cases for mini-batch Adam training"""

    def setup_method(self):
        self.examples = separable_examples()
        self.config = OptimizerConfig(learning_rate=0.1, batch_size=16)

    def test_loss_decreases(self):
        """Test that training lowers the loss from log 2"""
        result = fit(RerankerParams.zeros(), self.examples, 5, self.config, seed=1)

        assert len(result.epoch_losses) == 5
        assert result.epoch_losses[-1] < np.log(2.0) * 0.5
        assert result.epoch_losses[-1] == pytest.approx(bce_loss_and_grad(result.params, self.examples)[0])

    def test_loss_strictly_decreases_each_epoch(self):
        """Test that full-batch training lowers the loss on every epoch"""
        examples = margin_examples()
        config = OptimizerConfig(learning_rate=0.02, batch_size=len(examples), warmup_fraction=0.0)

        losses = fit(RerankerParams.zeros(), examples, 15, config).epoch_losses

        assert losses[0] < np.log(2.0)
        assert all(later < earlier for earlier, later in zip(losses, losses[1:]))

    def test_separable_set_is_fit_exactly(self):
        """Test that a separable training set ends fully classified"""
        examples = margin_examples()
        params = train(RerankerParams.zeros(), examples, 30, self.config)

        predicted = [int(score(params, ex.ids, ex.features) > 0.5) for ex in examples]

        assert predicted == [ex.label for ex in examples]

    def test_all_zero_labels_lower_probability(self):
        """Test that training on negatives only pushes predictions below one half"""
        negatives = [TrainingExample(ex.ids, ex.features, 0) for ex in self.examples]
        params = train(RerankerParams.zeros(), negatives, 2, self.config)

        probs = [score(params, ex.ids, ex.features) for ex in self.examples]

        assert np.mean(probs) < 0.5

    def test_input_params_untouched(self):
        """Test that fit trains a private copy"""
        params = RerankerParams.zeros()
        fit(params, self.examples, 2, self.config)

        assert not np.any(params.slots[SHARED])
        assert set(params.slots) == {SHARED}
        assert params.optimizer.step == 0

    def test_creates_task_and_model_slots(self):
        """Test that ids seen in training get slots"""
        params = train(RerankerParams.zeros(), self.examples, 1, self.config)

        assert params.ids_of("tid") == ["t1", "t2"]
        assert params.ids_of("mid") == ["m1", "m2"]

    def test_deterministic(self):
        """Test that the same seed gives bit-identical parameters"""
        a = train(RerankerParams.zeros(), self.examples, 3, self.config, seed=[4, 2])
        b = train(RerankerParams.zeros(), self.examples, 3, self.config, seed=[4, 2])

        assert set(a.slots) == set(b.slots)
        for key in a.slots:
            assert np.array_equal(a.slots[key], b.slots[key])

    def test_update_count_with_accumulation(self):
        """Test that accumulated batches count as one update"""
        config = OptimizerConfig(batch_size=16, accumulation_steps=4)
        result = fit(RerankerParams.zeros(), self.examples, 2, config)

        # 13 batches per epoch -> 4 updates per epoch (last one partial)
        assert result.updates == 8
        assert result.params.optimizer.step == 8

    def test_zero_epochs(self):
        """Test that zero epochs return an unchanged copy"""
        result = fit(RerankerParams.zeros(), self.examples, 0, self.config)

        assert result.updates == 0
        assert result.epoch_losses == []

    def test_empty_dataset(self):
        """Test that there is nothing to fit on an empty dataset"""
        with pytest.raises(ValueError):
            fit(RerankerParams.zeros(), [], 1, self.config)

    def test_divergence_is_reported(self):
        """Test that a non-finite loss stops training"""
        bad = [TrainingExample(AgentIds("t", "m"), FeatureVector(np.full(FEATURE_DIM, np.nan)), 1)]

        with pytest.raises(TrainingDivergedError) as info:
            fit(RerankerParams.zeros(), bad, 1, self.config)
        assert info.value.batch_index == 0

class TestCheckpoint:
    """Test cases for checkpoint files"""

    def setup_method(self):
        self.params = train(RerankerParams.zeros(), separable_examples(64), 2, OptimizerConfig(batch_size=8))

    def test_round_trip_is_exact(self, tmp_path):
        """Test that saved parameters and moments load back bit for bit"""
        path = tmp_path / "ckpt.json"
        save_checkpoint(self.params, path)
        loaded = load_checkpoint(path)

        assert set(loaded.slots) == set(self.params.slots)
        for key in self.params.slots:
            assert np.array_equal(loaded.slots[key], self.params.slots[key])
            assert np.array_equal(loaded.optimizer.m[key], self.params.optimizer.m[key])
        assert loaded.optimizer.step == self.params.optimizer.step

    def test_missing_file(self, tmp_path):
        """Test that a missing checkpoint raises CheckpointError"""
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.json")

    def test_truncated_file(self, tmp_path):
        """Test that a cut-off checkpoint raises CheckpointError"""
        path = tmp_path / "ckpt.json"
        save_checkpoint(self.params, path)
        path.write_text(path.read_text()[:40])

        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_schema_version_mismatch(self, tmp_path):
        """Test that a checkpoint for another feature schema is refused"""
        path = tmp_path / "ckpt.json"
        save_checkpoint(self.params, path)

        with pytest.raises(CheckpointError) as info:
            load_checkpoint(path, expected_schema=2)
        assert "schema" in str(info.value)

    def test_wrong_slot_shape(self, tmp_path):
        """Test that a slot of the wrong length is refused"""
        raw = checkpoint_dict(self.params)
        raw["slots"]["shared"] = [0.0, 1.0]
        path = tmp_path / "ckpt.json"
        path.write_text(json.dumps(raw))

        with pytest.raises(CheckpointError):
            load_checkpoint(path)
