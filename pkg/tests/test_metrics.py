import pytest
from scipy.stats import chi2
from app.agents.oracle import AgentDescriptor, OracleAgentSpec, OracleKind, QueryInstance, UtilityKind
from app.corpus.passages import PassageStore, RawDocument
from app.eval.metrics import MetricReport, downstream_utility, jaccard, jaccard_detail, kendall_tau, kendall_tau_detail, query_outcomes
from app.eval.significance import mcnemar

class TestListSimilarity:
    """Test cases for Jaccard and Kendall tau"""

    def test_kendall_tau_one_swap(self):
        """Test one discordant pair out of six"""
        assert kendall_tau(["a", "b", "c", "d"], ["a", "b", "d", "c"]) == pytest.approx(4 / 6)

    def test_kendall_tau_identical_and_reversed(self):
        """Test the extremes"""
        assert kendall_tau(["a", "b", "c"], ["a", "b", "c"]) == pytest.approx(1.0)
        assert kendall_tau(["a", "b", "c"], ["c", "b", "a"]) == pytest.approx(-1.0)

    def test_kendall_tau_uses_shared_items(self):
        """Test that items outside the intersection are ignored"""
        assert kendall_tau(["a", "x", "b", "c"], ["c", "b", "y", "a"]) == pytest.approx(-1.0)

    def test_kendall_tau_symmetric(self):
        """Test that tau does not depend on argument order"""
        a, b = ["a", "b", "c", "d", "e"], ["b", "a", "e", "c", "x"]

        assert kendall_tau(a, b) == pytest.approx(kendall_tau(b, a))

    def test_kendall_tau_degenerate(self):
        """Test that fewer than two shared items give zero by convention"""
        result = kendall_tau_detail(["a", "b"], ["a", "c"])

        assert result.value == 0.0
        assert result.degenerate

    def test_jaccard(self):
        """Test set overlap over union"""
        assert jaccard(["a", "b"], ["b", "c"]) == pytest.approx(1 / 3)
        assert jaccard(["a", "b"], ["b", "a"]) == 1.0
        assert jaccard(["a"], ["b"]) == 0.0

    def test_jaccard_both_empty(self):
        """Test that two empty lists are identical by convention"""
        result = jaccard_detail([], [])

        assert result.value == 1.0
        assert result.degenerate

class TestMcNemar:
    """Test cases for the paired significance test"""

    def test_large_discordance_uses_chi_square(self):
        """Test 49 versus 12 discordant pairs"""
        a = [0] * 49 + [1] * 12 + [1] * 30
        b = [1] * 49 + [0] * 12 + [1] * 30

        result = mcnemar(a, b)

        assert (result.n01, result.n10) == (49, 12)
        assert result.method == "chi2"
        assert result.statistic == pytest.approx(36 ** 2 / 61)
        assert result.p_value == pytest.approx(chi2.sf(36 ** 2 / 61, 1))
        assert result.p_value < 1e-4

    def test_continuity_corrected_statistic(self):
        """Test (|10 - 2| - 1)^2 / 12 = 49/12 with an exact p-value"""
        a = [0] * 10 + [1] * 2 + [1] * 5
        b = [1] * 10 + [0] * 2 + [1] * 5

        result = mcnemar(a, b)

        assert result.statistic == pytest.approx(49 / 12)
        assert result.method == "exact"
        assert result.p_value == pytest.approx(0.0386, abs=1e-4)

    def test_single_discordant_pair(self):
        """Test that one discordant pair is not significant at all"""
        result = mcnemar([0, 1, 1], [1, 1, 1])

        assert result.method == "exact"
        assert result.p_value == pytest.approx(1.0)
        assert result.statistic == 0.0

    def test_no_discordance(self):
        """Test identical outcome vectors"""
        result = mcnemar([1, 0, 1], [1, 0, 1])

        assert result.method == "none"
        assert result.p_value == 1.0

    def test_symmetric(self):
        """Test that swapping the systems swaps the counts only"""
        a = [0, 0, 0, 1, 1, 0, 1]
        b = [1, 1, 0, 0, 1, 1, 1]

        assert mcnemar(a, b).p_value == pytest.approx(mcnemar(b, a).p_value)

    def test_length_mismatch(self):
        """Test that outcome vectors must be paired"""
        with pytest.raises(ValueError):
            mcnemar([0, 1], [0])

    def test_non_binary(self):
        """Test that outcomes must be 0 or 1"""
        with pytest.raises(ValueError):
            mcnemar([0, 2], [0, 1])

class TestDownstreamUtility:
    """Test cases for per-query success and utility"""

    def setup_method(self):
        self.store = PassageStore.from_documents([
            RawDocument("hit", "Title", "the answer is qaxo here"),
            RawDocument("miss", "Title", "nothing useful"),
        ])
        self.agent = AgentDescriptor(agent_id="qa-m", tid="qa", mid="m", k=2, utility_kind=UtilityKind.EXACT_MATCH,
                                     oracle=OracleAgentSpec(kind=OracleKind.CONTAINMENT, noise_rate=0.4))
        self.queries = [
            QueryInstance(query_id="q1", input="what title", answers=["qaxo"]),
            QueryInstance(query_id="q2", input="what title", answers=["qaxo"]),
        ]

    def test_success_needs_one_useful_passage(self):
        """Test that a query succeeds when any served passage is useful"""
        served = {"q1": ["miss#0", "hit#0"], "q2": ["miss#0"]}

        assert query_outcomes(self.agent, served, self.queries, self.store) == [1, 0]
        assert downstream_utility(self.agent, served, self.queries, self.store) == 0.5

    def test_noise_free(self):
        """Test that evaluation ignores the agent's label noise"""
        served = {"q1": ["hit#0"], "q2": ["hit#0"]}

        assert downstream_utility(self.agent, served, self.queries, self.store) == 1.0

    def test_unserved_query_fails(self):
        """Test that a query with no list counts as a failure"""
        assert query_outcomes(self.agent, {}, self.queries, self.store) == [0, 0]

    def test_empty_query_set(self):
        """Test that utility over no queries is undefined"""
        with pytest.raises(ValueError):
            downstream_utility(self.agent, {}, [], self.store)

class TestMetricReport:
    """Test cases for the report container"""

    def test_macro_average(self):
        """Test the unweighted mean over agents"""
        report = MetricReport()
        report.add("b", ["q1", "q2"], [1, 1])
        report.add("a", ["q1", "q2", "q3", "q4"], [1, 0, 0, 0])

        assert report.macro_average == pytest.approx((1.0 + 0.25) / 2)
        frame = report.to_frame()
        assert list(frame["agent_id"]) == ["a", "b"]
        assert list(frame["num_queries"]) == [4, 2]
