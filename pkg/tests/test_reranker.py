import pytest
import numpy as np
from app.errors import DimensionMismatchError
from app.index.bm25 import Candidate
from app.reranker.features import FEATURE_DIM, FeatureVector
from app.reranker.model import (
    SHARED,
    AgentIds,
    RerankerParams,
    TrainingExample,
    apply_id_dropout,
    bce_loss_and_grad,
    params_equal,
    rank_matrix,
    rerank,
    score,
    sigmoid,
)

def random_params(rng, tids=("t1", "t2"), mids=("m1", "m2")):
    params = RerankerParams.zeros()
    params.slots[SHARED] = rng.normal(size=FEATURE_DIM + 1)
    for tid in tids:
        params.slots[f"tid:{tid}"] = rng.normal(size=FEATURE_DIM + 1)
    for mid in mids:
        params.slots[f"mid:{mid}"] = rng.normal(size=FEATURE_DIM + 1)
    return params

def random_batch(rng, size):
    idents = [AgentIds("t1", "m1"), AgentIds("t1", "m2"), AgentIds("t2", "m1"), AgentIds.unknown(), AgentIds("t3", "m9")]
    return [
        TrainingExample(idents[int(rng.integers(0, len(idents)))],
                        FeatureVector(rng.normal(size=FEATURE_DIM)), int(rng.integers(0, 2)))
        for _ in range(size)
    ]

class TestScoring:
    """Test cases for the personalized linear scorer"""

    def setup_method(self):
        self.params = RerankerParams.zeros()
        self.features = FeatureVector(np.arange(FEATURE_DIM, dtype=float))

    def test_zero_params_give_one_half(self):
        """Test that an untrained scorer is indifferent"""
        assert score(self.params, AgentIds("t", "m"), self.features) == 0.5

    def test_components_add(self):
        """Test that shared, task and model slots sum into one logit"""
        self.params.slots[SHARED][FEATURE_DIM] = 0.5
        self.params.ensure_slot("tid:t")[FEATURE_DIM] = 1.0
        self.params.ensure_slot("mid:m")[0] = 2.0  # feature 0 is 0.0

        assert score(self.params, AgentIds("t", "m"), self.features) == pytest.approx(float(sigmoid(1.5)))
        assert score(self.params, AgentIds("t", "other"), self.features) == pytest.approx(float(sigmoid(1.5)))
        assert score(self.params, AgentIds.unknown(), self.features) == pytest.approx(float(sigmoid(0.5)))

    def test_unknown_ids_read_as_zero(self):
        """Test that unk never picks up a slot even if one was written"""
        self.params.slots["tid:unk"] = np.ones(FEATURE_DIM + 1)

        assert score(self.params, AgentIds.unknown(), self.features) == 0.5

    def test_probability_stays_open(self):
        """Test that extreme logits never reach exactly 0 or 1"""
        assert 0.0 < float(sigmoid(-1e4)) < float(sigmoid(1e4)) < 1.0

    def test_dimension_mismatch(self):
        """Test that a vector of the wrong length is refused"""
        with pytest.raises(DimensionMismatchError) as info:
            score(self.params, AgentIds("t", "m"), FeatureVector(np.zeros(FEATURE_DIM - 1)))
        assert info.value.expected == FEATURE_DIM

    def test_empty_ids_rejected(self):
        """Test that blank identifiers are not valid agent ids"""
        with pytest.raises(ValueError):
            AgentIds("", "m")

class TestRanking:
    """Test cases for candidate reranking"""

    def test_zero_params_keep_first_stage_order(self, toy_engine):
        """Test that an all-zero scorer reproduces the BM25 list"""
        candidates = toy_engine.first_stage("apple river city")
        ranked = rerank(RerankerParams.zeros(), AgentIds("t", "m"), "apple river city", candidates, 10, toy_engine.store)

        assert [d.passage_id for d in ranked] == [c.passage_id for c in candidates]
        assert all(d.relevance_prob == 0.5 for d in ranked)

    def test_logit_then_first_stage_then_id(self):
        """Test the three-level tie-break"""
        candidates = [Candidate("b", 1.0), Candidate("a", 1.0), Candidate("c", 2.0), Candidate("d", 0.5)]
        features = np.zeros((4, FEATURE_DIM))
        features[3, 1] = 1.0
        params = RerankerParams.zeros()
        params.slots[SHARED][1] = 3.0

        ranked = rank_matrix(params, AgentIds("t", "m"), candidates, features, 4)

        assert [d.passage_id for d in ranked] == ["d", "c", "a", "b"]

    def test_shared_bias_shift_keeps_order(self, toy_engine):
        """Test that a constant added to the shared bias moves every logit equally"""
        rng = np.random.default_rng(8)
        params = random_params(rng, tids=("t",), mids=("m",))
        shifted = params.copy()
        shifted.slots[SHARED][FEATURE_DIM] += 2.5
        candidates = toy_engine.first_stage("apple pear river city")

        before = rerank(params, AgentIds("t", "m"), "apple pear river city", candidates, 10, toy_engine.store)
        after = rerank(shifted, AgentIds("t", "m"), "apple pear river city", candidates, 10, toy_engine.store)

        assert [d.passage_id for d in after] == [d.passage_id for d in before]
        assert {d.passage_id for d in before} <= {c.passage_id for c in candidates}
        assert len({d.passage_id for d in before}) == len(before)

    def test_k_truncates(self, toy_engine):
        """Test that at most k results come back"""
        candidates = toy_engine.first_stage("the")

        assert len(rerank(RerankerParams.zeros(), AgentIds("t", "m"), "the", candidates, 2, toy_engine.store)) == 2

    def test_no_candidates(self, toy_engine):
        """Test that an empty candidate list ranks to an empty list"""
        assert rerank(RerankerParams.zeros(), AgentIds("t", "m"), "zzz", [], 5, toy_engine.store) == []

    def test_k_must_be_positive(self, toy_engine):
        """Test that k below one is rejected"""
        with pytest.raises(ValueError):
            rerank(RerankerParams.zeros(), AgentIds("t", "m"), "apple", toy_engine.first_stage("apple"), 0, toy_engine.store)

class TestLossAndGradient:
    """Test cases for the feedback-as-label objective"""

    def test_gradient_matches_finite_differences(self):
        """Test the analytic gradient against central differences on every coordinate"""
        rng = np.random.default_rng(5)
        h = 1e-6
        worst = 0.0
        for _ in range(30):
            params = random_params(rng)
            batch = random_batch(rng, int(rng.integers(1, 12)))
            _, grad = bce_loss_and_grad(params, batch)

            for key in sorted(set(grad) | set(params.slots)):
                analytic = grad.get(key, np.zeros(FEATURE_DIM + 1))
                numeric = np.empty(FEATURE_DIM + 1)
                for j in range(FEATURE_DIM + 1):
                    plus, minus = params.copy(), params.copy()
                    plus.ensure_slot(key)[j] += h
                    minus.ensure_slot(key)[j] -= h
                    numeric[j] = (bce_loss_and_grad(plus, batch)[0] - bce_loss_and_grad(minus, batch)[0]) / (2 * h)

                error = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-2)
                worst = max(worst, float(error.max()))

        assert worst < 1e-5

    def test_unknown_rows_only_reach_shared(self):
        """Test that unk rows produce no task or model gradient"""
        batch = [TrainingExample(AgentIds.unknown(), FeatureVector(np.ones(FEATURE_DIM)), 1)]

        _, grad = bce_loss_and_grad(RerankerParams.zeros(), batch)

        assert set(grad) == {SHARED}

    def test_new_ids_get_gradient_before_slot_exists(self):
        """Test that unseen task and model ids still receive gradient"""
        batch = [TrainingExample(AgentIds("t9", "m9"), FeatureVector(np.ones(FEATURE_DIM)), 1)]

        _, grad = bce_loss_and_grad(RerankerParams.zeros(), batch)

        assert set(grad) == {SHARED, "tid:t9", "mid:m9"}
        assert grad["tid:t9"][0] == pytest.approx(-0.5)

    def test_zero_params_loss_is_log_two(self):
        """Test the loss of an indifferent scorer"""
        rng = np.random.default_rng(0)
        loss, _ = bce_loss_and_grad(RerankerParams.zeros(), random_batch(rng, 10))

        assert loss == pytest.approx(np.log(2.0))

    def test_non_binary_label(self):
        """Test that labels other than 0/1 are refused"""
        batch = [TrainingExample(AgentIds("t", "m"), FeatureVector(np.zeros(FEATURE_DIM)), 2)]

        with pytest.raises(ValueError):
            bce_loss_and_grad(RerankerParams.zeros(), batch)

    def test_empty_batch(self):
        """Test that an empty batch has no loss"""
        with pytest.raises(ValueError):
            bce_loss_and_grad(RerankerParams.zeros(), [])

class TestIdDropout:
    """Test cases for identity dropout"""

    def setup_method(self):
        rng = np.random.default_rng(1)
        self.batch = [TrainingExample(AgentIds("t", "m"), FeatureVector(rng.normal(size=FEATURE_DIM)), 1)
                      for _ in range(2000)]

    def test_rate_zero_keeps_ids(self):
        """Test that no sample is dropped at rate 0"""
        assert apply_id_dropout(self.batch, 0.0, seed=3) == self.batch

    def test_rate_one_drops_everything(self):
        """Test that every sample becomes unk at rate 1"""
        dropped = apply_id_dropout(self.batch, 1.0, seed=3)

        assert all(ex.ids == AgentIds.unknown() for ex in dropped)

    def test_drops_both_ids_together(self):
        """Test that tid and mid are replaced jointly at roughly the given rate"""
        dropped = apply_id_dropout(self.batch, 0.1, seed=3)
        unknown = sum(ex.ids == AgentIds.unknown() for ex in dropped)

        assert all(ex.ids in (AgentIds.unknown(), AgentIds("t", "m")) for ex in dropped)
        assert 120 <= unknown <= 280
        assert [ex.features for ex in dropped] == [ex.features for ex in self.batch]

    def test_seeded(self):
        """Test that the same seed drops the same samples"""
        assert apply_id_dropout(self.batch, 0.5, seed=9) == apply_id_dropout(self.batch, 0.5, seed=9)

    def test_invalid_rate(self):
        """Test that a rate outside [0, 1] is refused"""
        with pytest.raises(ValueError):
            apply_id_dropout(self.batch, 1.5)

class TestParamsEqual:
    """Test cases for exact parameter comparison"""

    def test_copy_is_equal(self):
        """Test that a copy compares equal and a changed slot does not"""
        params = random_params(np.random.default_rng(4))
        other = params.copy()

        assert params_equal(params, other)
        other.slots["mid:m1"][0] += 1e-12
        assert not params_equal(params, other)

    def test_extra_slot_differs(self):
        """Test that slot sets must match"""
        params = RerankerParams.zeros()
        other = RerankerParams.zeros()
        other.ensure_slot("tid:x")

        assert not params_equal(params, other)
