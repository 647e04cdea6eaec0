import threading
import pytest
from app.ium.engine import SearchEngine
from app.reranker.model import AgentIds, RerankerParams

class TestCandidateCache:
    """Test cases for the per-query candidate pool cache"""

    def setup_method(self):
        self.queries = ["apple", "pear", "river", "city", "fruit"]

    def test_pool_is_reused(self, toy_store):
        """Test that a repeated query returns the cached pool"""
        engine = SearchEngine.from_store(toy_store)

        assert engine.pool("apple") is engine.pool("apple")
        assert engine.cached_pools == 1

    def test_cache_is_bounded(self, toy_store):
        """Test that distinct queries never grow the cache past its size"""
        engine = SearchEngine(toy_store, SearchEngine.from_store(toy_store).index, pool_cache_size=2)
        for query in self.queries * 20:
            engine.pool(query)

        assert engine.cached_pools == 2

    def test_least_recently_used_is_evicted(self, toy_store):
        """Test that a pool touched recently survives eviction"""
        engine = SearchEngine(toy_store, SearchEngine.from_store(toy_store).index, pool_cache_size=2)
        apple = engine.pool("apple")
        engine.pool("pear")
        engine.pool("apple")
        engine.pool("river")

        assert engine.pool("apple") is apple
        assert engine.cached_pools == 2

    def test_evicted_pool_rebuilds_identically(self, toy_store):
        """Test that serving after eviction gives the same list"""
        engine = SearchEngine(toy_store, SearchEngine.from_store(toy_store).index, pool_cache_size=1)
        params, ids = RerankerParams.zeros(), AgentIds("t", "m")
        before = [d.passage_id for d in engine.serve(params, ids, "apple pear", 3)]
        engine.pool("river")

        assert [d.passage_id for d in engine.serve(params, ids, "apple pear", 3)] == before

    def test_concurrent_access(self, toy_store):
        """Test that threads sharing one engine keep the cache consistent"""
        engine = SearchEngine(toy_store, SearchEngine.from_store(toy_store).index, pool_cache_size=3)
        errors = []

        def worker(offset):
            try:
                for i in range(200):
                    query = self.queries[(i + offset) % len(self.queries)]
                    assert engine.pool(query).query == query
            except Exception as e:
                errors.append(e)

        threads = [threading.Thread(target=worker, args=(n,)) for n in range(8)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        assert errors == []
        assert engine.cached_pools == 3

    def test_invalid_cache_size(self, toy_store):
        """Test that the cache must hold at least one pool"""
        with pytest.raises(ValueError):
            SearchEngine(toy_store, SearchEngine.from_store(toy_store).index, pool_cache_size=0)
