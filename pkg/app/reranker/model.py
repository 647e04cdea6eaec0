import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from app.corpus.passages import PassageStore
from app.corpus.tokenize import tokenize
from app.errors import DimensionMismatchError
from app.index.bm25 import Candidate
from app.reranker.features import FEATURE_DIM, FEATURE_SCHEMA_VERSION, FeatureVector, extract_features

logger = logging.getLogger(__name__)

UNK = "unk"
SHARED = "shared"
TID = "tid"
MID = "mid"

PROB_EPS = 1e-12
_PROB_LOW = np.nextafter(0.0, 1.0)
_PROB_HIGH = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class AgentIds:
    tid: str
    mid: str

    def __post_init__(self):
        if not self.tid or not self.mid:
            raise ValueError("tid and mid must be non-empty")

    @classmethod
    def unknown(cls) -> "AgentIds":
        return cls(UNK, UNK)


@dataclass(frozen=True)
class ScoredDoc:
    passage_id: str
    relevance_prob: float
    first_stage_score: float
    features: FeatureVector


@dataclass(frozen=True)
class TrainingExample:
    ids: AgentIds
    features: FeatureVector
    label: int


def slot_key(kind: str, ident: str) -> str:
    return f"{kind}:{ident}"


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter slots"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            step=self.step,
        )


class RerankerParams:
    """
    Linear relevance scorer with additive per-task and per-model components.

    Every component ("slot") is a vector of length dim + 1 whose last entry
    is the bias. Slots are keyed "shared", "tid:<id>" and "mid:<id>". Task
    and model slots are created lazily on their first update; "unk" never
    gets a slot and reads as zero.
    """

    def __init__(
        self,
        dim: int = FEATURE_DIM,
        slots: Optional[Dict[str, np.ndarray]] = None,
        optimizer: Optional[AdamState] = None,
        schema_version: int = FEATURE_SCHEMA_VERSION,
    ):
        self.dim = dim
        self.schema_version = schema_version
        self.slots: Dict[str, np.ndarray] = slots if slots is not None else {}
        if SHARED not in self.slots:
            self.slots[SHARED] = np.zeros(dim + 1)
        self.optimizer = optimizer if optimizer is not None else AdamState()

    @classmethod
    def zeros(cls, dim: int = FEATURE_DIM) -> "RerankerParams":
        return cls(dim=dim)

    def copy(self) -> "RerankerParams":
        return RerankerParams(
            dim=self.dim,
            slots={k: a.copy() for k, a in self.slots.items()},
            optimizer=self.optimizer.copy(),
            schema_version=self.schema_version,
        )

    def slot(self, kind: str, ident: str) -> np.ndarray:
        """Slot vector for an ID; zeros for "unk" and unseen IDs"""
        if ident == UNK:
            return np.zeros(self.dim + 1)
        found = self.slots.get(slot_key(kind, ident))
        return found if found is not None else np.zeros(self.dim + 1)

    def ensure_slot(self, key: str) -> np.ndarray:
        if key not in self.slots:
            self.slots[key] = np.zeros(self.dim + 1)
        return self.slots[key]

    def ids_of(self, kind: str) -> List[str]:
        prefix = f"{kind}:"
        return sorted(k[len(prefix):] for k in self.slots if k.startswith(prefix))

    @property
    def w_shared(self) -> np.ndarray:
        return self.slots[SHARED][:self.dim]

    @property
    def bias_shared(self) -> float:
        return float(self.slots[SHARED][self.dim])

    @property
    def w_tid(self) -> Dict[str, np.ndarray]:
        return {tid: self.slots[slot_key(TID, tid)][:self.dim] for tid in self.ids_of(TID)}

    @property
    def bias_tid(self) -> Dict[str, float]:
        return {tid: float(self.slots[slot_key(TID, tid)][self.dim]) for tid in self.ids_of(TID)}

    @property
    def w_mid(self) -> Dict[str, np.ndarray]:
        return {mid: self.slots[slot_key(MID, mid)][:self.dim] for mid in self.ids_of(MID)}

    @property
    def bias_mid(self) -> Dict[str, float]:
        return {mid: float(self.slots[slot_key(MID, mid)][self.dim]) for mid in self.ids_of(MID)}

    def effective(self, ids: AgentIds) -> np.ndarray:
        """shared + tid + mid, weights then bias"""
        return self.slots[SHARED] + self.slot(TID, ids.tid) + self.slot(MID, ids.mid)

    def logits(self, ids: AgentIds, features: np.ndarray) -> np.ndarray:
        """Logits for a (n, dim) feature matrix under a single agent identity"""
        features = np.atleast_2d(features)
        if features.shape[1] != self.dim:
            raise DimensionMismatchError(self.dim, features.shape[1])
        eff = self.effective(ids)
        return features @ eff[:self.dim] + eff[self.dim]


def sigmoid(z):
    """Logistic function kept inside the open interval (0, 1)"""
    return np.clip(expit(z), _PROB_LOW, _PROB_HIGH)


def score(params: RerankerParams, ids: AgentIds, features: FeatureVector) -> float:
    """Relevance probability p(R=1 | x, d) for one feature vector"""
    values = np.asarray(features.values, dtype=np.float64)
    if values.shape != (params.dim,):
        raise DimensionMismatchError(params.dim, values.size)
    return float(sigmoid(params.logits(ids, values)[0]))


def rank_matrix(
    params: RerankerParams,
    ids: AgentIds,
    candidates: Sequence[Candidate],
    features: np.ndarray,
    k: int,
) -> List[ScoredDoc]:
    """
    Rerank candidates whose feature rows are already computed.

    Order: logit descending, then first-stage score descending, then
    passage_id ascending.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not candidates:
        return []

    z = params.logits(ids, features)
    probs = sigmoid(z)
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-z[i], -candidates[i].first_stage_score, candidates[i].passage_id),
    )
    return [
        ScoredDoc(
            passage_id=candidates[i].passage_id,
            relevance_prob=float(probs[i]),
            first_stage_score=candidates[i].first_stage_score,
            features=FeatureVector(values=features[i]),
        )
        for i in order[:k]
    ]


def feature_matrix(query: str, candidates: Sequence[Candidate], store: PassageStore) -> np.ndarray:
    if not candidates:
        return np.zeros((0, FEATURE_DIM))
    q_tokens = tokenize(query)
    rows = [
        extract_features(
            query,
            store[c.passage_id],
            c.first_stage_score,
            text_tokens=store.text_tokens(c.passage_id),
            title_tokens=store.title_tokens(c.passage_id),
            query_tokens=q_tokens,
        ).values
        for c in candidates
    ]
    return np.vstack(rows)


def rerank(
    params: RerankerParams,
    ids: AgentIds,
    query: str,
    candidates: Sequence[Candidate],
    k: int,
    store: PassageStore,
) -> List[ScoredDoc]:
    """Score first-stage candidates for an agent and keep the top k"""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not candidates:
        return []
    return rank_matrix(params, ids, candidates, feature_matrix(query, candidates, store), k)


def _row_masks(idents: Sequence[str]) -> Dict[str, np.ndarray]:
    """Row mask per non-"unk" identity"""
    masks: Dict[str, np.ndarray] = {}
    idents = np.asarray(idents, dtype=object)
    for ident in sorted(set(idents.tolist())):
        if ident != UNK:
            masks[ident] = idents == ident
    return masks


def loss_and_grad_arrays(
    params: RerankerParams,
    features: np.ndarray,
    labels: np.ndarray,
    tids: Sequence[str],
    mids: Sequence[str],
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean binary cross-entropy and its exact gradient over stacked arrays.

    The gradient dict holds one entry per slot that receives signal: always
    "shared", plus every non-"unk" tid/mid present in the batch, whether or
    not that slot exists yet.
    """
    n, dim = features.shape
    if dim != params.dim:
        raise DimensionMismatchError(params.dim, dim)

    augmented = np.hstack([features, np.ones((n, 1))])
    tid_masks = _row_masks(tids)
    mid_masks = _row_masks(mids)

    weights = np.tile(params.slots[SHARED], (n, 1))
    for tid, mask in tid_masks.items():
        weights[mask] += params.slot(TID, tid)
    for mid, mask in mid_masks.items():
        weights[mask] += params.slot(MID, mid)

    z = np.einsum("ij,ij->i", augmented, weights)
    p = expit(z)
    clamped = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    loss = -float(np.mean(labels * np.log(clamped) + (1.0 - labels) * np.log(1.0 - clamped)))

    per_row = augmented * ((p - labels) / n)[:, None]
    grad = {SHARED: per_row.sum(axis=0)}
    for tid, mask in tid_masks.items():
        grad[slot_key(TID, tid)] = per_row[mask].sum(axis=0)
    for mid, mask in mid_masks.items():
        grad[slot_key(MID, mid)] = per_row[mask].sum(axis=0)
    return loss, grad


def stack_examples(batch: Sequence[TrainingExample]) -> Tuple[np.ndarray, np.ndarray, List[str], List[str]]:
    features = np.vstack([ex.features.values for ex in batch])
    labels = np.array([ex.label for ex in batch], dtype=np.float64)
    return features, labels, [ex.ids.tid for ex in batch], [ex.ids.mid for ex in batch]


def bce_loss_and_grad(params: RerankerParams, batch: Sequence[TrainingExample]) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Pointwise feedback-as-label objective for one batch

    Returns:
        (loss, gradient) where gradient maps slot keys to arrays shaped like
        the slots
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    for ex in batch:
        if ex.label not in (0, 1):
            raise ValueError(f"labels must be binary, got {ex.label}")
    return loss_and_grad_arrays(params, *stack_examples(batch))


def dropout_mask(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    return rng.random(n) < rate


def apply_id_dropout(
    batch: Sequence[TrainingExample],
    rate: float = 0.1,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
) -> List[TrainingExample]:
    """Replace both tid and mid with "unk" on a random fraction of samples"""
    rng = rng if rng is not None else np.random.default_rng(seed)
    mask = dropout_mask(len(batch), rate, rng)
    unknown = AgentIds.unknown()
    return [
        TrainingExample(unknown, ex.features, ex.label) if dropped else ex
        for ex, dropped in zip(batch, mask)
    ]


def params_equal(a: RerankerParams, b: RerankerParams) -> bool:
    if a.dim != b.dim or set(a.slots) != set(b.slots):
        return False
    return all(np.array_equal(a.slots[k], b.slots[k]) for k in a.slots)

