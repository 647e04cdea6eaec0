import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.corpus.passages import PassageStore
from app.index.bm25 import DEFAULT_FIRST_STAGE_N, Candidate, InvertedIndex, bm25_retrieve, build_index
from app.reranker.model import AgentIds, RerankerParams, ScoredDoc, feature_matrix, rank_matrix

logger = logging.getLogger(__name__)

DEFAULT_POOL_CACHE_SIZE = 4096


@dataclass(frozen=True)
class CandidatePool:
    """First-stage candidates for one query with their feature rows"""

    query: str
    candidates: Tuple[Candidate, ...]
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.candidates)


class SearchEngine:
    """Cascaded retrieval: BM25 first stage, trainable second stage"""

    def __init__(
        self,
        store: PassageStore,
        index: InvertedIndex,
        first_stage_n: int = DEFAULT_FIRST_STAGE_N,
        pool_cache_size: int = DEFAULT_POOL_CACHE_SIZE,
    ):
        if first_stage_n < 1:
            raise ValueError(f"first_stage_n must be >= 1, got {first_stage_n}")
        if pool_cache_size < 1:
            raise ValueError(f"pool_cache_size must be >= 1, got {pool_cache_size}")
        self.store = store
        self.index = index
        self.first_stage_n = first_stage_n
        self.pool_cache_size = pool_cache_size
        # Features do not depend on parameters, so pools are reused across iterations.
        # Least recently used pools are evicted past pool_cache_size.
        self._pools: "OrderedDict[str, CandidatePool]" = OrderedDict()
        self._pools_lock = threading.Lock()

    @classmethod
    def from_store(cls, store: PassageStore, first_stage_n: int = DEFAULT_FIRST_STAGE_N) -> "SearchEngine":
        return cls(store, build_index(store), first_stage_n)

    def first_stage(self, query: str) -> List[Candidate]:
        return bm25_retrieve(self.index, query, self.first_stage_n)

    def pool(self, query: str) -> CandidatePool:
        with self._pools_lock:
            cached = self._pools.get(query)
            if cached is not None:
                self._pools.move_to_end(query)
                return cached

        # Built outside the lock; a concurrent duplicate build yields an identical pool
        candidates = tuple(self.first_stage(query))
        built = CandidatePool(query, candidates, feature_matrix(query, candidates, self.store))
        with self._pools_lock:
            cached = self._pools.setdefault(query, built)
            self._pools.move_to_end(query)
            while len(self._pools) > self.pool_cache_size:
                self._pools.popitem(last=False)
        return cached

    @property
    def cached_pools(self) -> int:
        with self._pools_lock:
            return len(self._pools)

    def serve(self, params: RerankerParams, ids: AgentIds, query: str, k: int) -> List[ScoredDoc]:
        """Top-k reranked passages for one agent identity"""
        pool = self.pool(query)
        if not pool.candidates:
            return []
        return rank_matrix(params, ids, pool.candidates, pool.features, k)

    def clear_cache(self) -> None:
        with self._pools_lock:
            self._pools.clear()
