"""
Synthetic benchmark with known ground truth.

The corpus is organized around entities. Each entity has a two-word name
and a handful of facts (relation -> answer token); every fact becomes one
query "<question word> <relation> <name>" whose gold answer is the token.

Per entity the generator writes:

* fact passages: each states one or two of the entity's facts as the
  phrase "<relation> <name> <answer>" inside filler text. Each fact is
  supported by 2-5 of them. A passage either carries the entity name in
  its title or not, and states its facts in the first half of the body or
  in the second half. Containment agents accept every supporting passage;
  title-sensitive agents only the titled ones; position-sensitive agents
  only the early ones. Placement is drawn so the three kinds disagree on
  roughly 30% of supporting passages.
* hub passages: short pages that repeat the name and mention every
  relation of the entity without ever stating an answer. BM25 prefers them
  over the longer fact passages, which gives the reranker something to fix.

Background documents of filler text, some longer than one passage, pad the
corpus. Every vocabulary (filler, entity names, answers) is drawn from a
disjoint alphabet, so an answer string only ever occurs where it was
planted.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.agents.oracle import (
    AgentDescriptor,
    OracleAgentSpec,
    OracleKind,
    QueryInstance,
    UtilityKind,
    save_roster,
    write_queries,
)
from app.corpus.passages import RawDocument, write_tsv
from app.storage.runs import write_json

logger = logging.getLogger(__name__)

TASKS: Tuple[Tuple[str, UtilityKind], ...] = (
    ("openqa", UtilityKind.EXACT_MATCH),
    ("trivia", UtilityKind.EXACT_MATCH),
    ("multihop", UtilityKind.EXACT_MATCH),
    ("factcheck", UtilityKind.ACCURACY),
    ("slotfill", UtilityKind.ACCURACY),
    ("relations", UtilityKind.ACCURACY),
)

# (model id, oracle kind, retrieval depth)
MODELS: Tuple[Tuple[str, OracleKind, int], ...] = (
    ("encdec", OracleKind.CONTAINMENT, 10),
    ("denoiser", OracleKind.POSITION_SENSITIVE, 4),
    ("fusion", OracleKind.TITLE_SENSITIVE, 10),
)

RELATIONS = (
    "capital", "founder", "author", "birthplace", "spouse", "genre", "director", "league",
    "language", "currency", "anthem", "inventor", "composer", "publisher", "headquarters", "mascot",
    "coach", "sponsor", "architect", "painter", "religion", "continent", "employer", "instrument",
    "producer", "manufacturer", "airport", "river", "mountain", "owner", "successor", "predecessor",
    "editor", "narrator", "designer", "landmark", "dialect", "rival", "motto", "emblem",
)
QUESTION_WORDS = ("who", "what", "which", "where", "when")

VOWELS = "aeiou"
FILLER_CONSONANTS = "bdfgklmnprstv"
ENTITY_CONSONANTS = "cjwyz"
ANSWER_CONSONANTS = "hqx"

SPLITS = ("train", "test", "stream")


class BenchmarkSpec(BaseModel):
    seed: int = 7
    num_tasks: int = Field(len(TASKS), ge=1, le=len(TASKS))
    train_per_task: int = Field(200, ge=1)
    test_per_task: int = Field(100, ge=1)
    stream_per_task: int = Field(256, ge=0)
    facts_per_entity: int = Field(4, ge=1, le=len(RELATIONS))
    min_positives: int = Field(2, ge=1)
    max_positives: int = Field(5, ge=1)
    min_hubs: int = Field(5, ge=0)
    max_hubs: int = Field(12, ge=0)
    background_docs: int = Field(800, ge=0)
    filler_vocabulary: int = Field(2000, ge=10)
    # Share of supporting passages that are both titled and early
    agreement_rate: float = Field(0.7, ge=0.0, le=1.0)
    noise_rate: float = Field(0.0, ge=0.0, lt=0.5)

    @model_validator(mode="after")
    def _ranges(self) -> "BenchmarkSpec":
        if self.min_positives > self.max_positives:
            raise ValueError("min_positives must not exceed max_positives")
        if self.min_hubs > self.max_hubs:
            raise ValueError("min_hubs must not exceed max_hubs")
        return self

    def split_sizes(self) -> Dict[str, int]:
        return {"train": self.train_per_task, "test": self.test_per_task, "stream": self.stream_per_task}


@dataclass
class Benchmark:
    spec: BenchmarkSpec
    documents: List[RawDocument] = field(default_factory=list)
    agents: List[AgentDescriptor] = field(default_factory=list)
    queries: Dict[str, Dict[str, List[QueryInstance]]] = field(default_factory=dict)

    def query_sets(self, split: str) -> Dict[str, List[QueryInstance]]:
        """Queries of one split keyed by agent_id"""
        return {a.agent_id: self.queries[a.tid][split] for a in self.agents}

    def all_queries(self, split: str) -> List[QueryInstance]:
        return [q for tid, _ in TASKS[:self.spec.num_tasks] for q in self.queries[tid][split]]


@dataclass
class _Fact:
    query_id: str
    relation: str
    answer: str
    question_word: str


@dataclass
class _Entity:
    first: str
    last: str
    facts: List[_Fact]

    @property
    def name(self) -> List[str]:
        return [self.first, self.last]


class _WordFactory:
    """Unique pseudo-words over a fixed consonant-vowel alphabet"""

    def __init__(self, rng: np.random.Generator, consonants: str):
        self.rng = rng
        self.syllables = [c + v for c in consonants for v in VOWELS]
        self.used = set()

    def fresh(self, num_syllables: int) -> str:
        while True:
            picks = self.rng.integers(0, len(self.syllables), size=num_syllables)
            word = "".join(self.syllables[i] for i in picks)
            if word not in self.used:
                self.used.add(word)
                return word


class _Generator:
    def __init__(self, spec: BenchmarkSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        fillers = _WordFactory(self.rng, FILLER_CONSONANTS)
        self.filler = [fillers.fresh(int(self.rng.integers(2, 4))) for _ in range(spec.filler_vocabulary)]
        self.entity_words = _WordFactory(self.rng, ENTITY_CONSONANTS)
        self.answer_words = _WordFactory(self.rng, ANSWER_CONSONANTS)

    def filler_words(self, n: int) -> List[str]:
        return [self.filler[i] for i in self.rng.integers(0, len(self.filler), size=n)]

    def placement(self) -> Tuple[bool, bool]:
        """(titled, early) for one supporting passage"""
        draw = self.rng.random()
        if draw < self.spec.agreement_rate:
            return True, True
        if draw < self.spec.agreement_rate + (1.0 - self.spec.agreement_rate) / 2:
            return True, False
        return False, True

    def entities(self, tid: str, num_facts: int) -> List[_Entity]:
        per_entity = self.spec.facts_per_entity
        entities = []
        counter = 0
        for _ in range(math.ceil(num_facts / per_entity)):
            size = min(per_entity, num_facts - counter)
            relations = self.rng.choice(len(RELATIONS), size=size, replace=False)
            facts = []
            for r in relations:
                facts.append(_Fact(
                    query_id=f"{tid}-q{counter:04d}",
                    relation=RELATIONS[int(r)],
                    answer=self.answer_words.fresh(4),
                    question_word=QUESTION_WORDS[int(self.rng.integers(0, len(QUESTION_WORDS)))],
                ))
                counter += 1
            entities.append(_Entity(self.entity_words.fresh(3), self.entity_words.fresh(3), facts))
        return entities

    def fact_documents(self, doc_prefix: str, entity: _Entity) -> List[RawDocument]:
        # One slot per supporting passage a fact needs
        groups: Dict[Tuple[bool, bool], List[_Fact]] = {}
        for fact in entity.facts:
            for _ in range(int(self.rng.integers(self.spec.min_positives, self.spec.max_positives + 1))):
                groups.setdefault(self.placement(), []).append(fact)

        documents = []
        for key in sorted(groups, reverse=True):
            titled, early = key
            slots = groups[key]
            order = self.rng.permutation(len(slots))
            slots = [slots[i] for i in order]
            while slots:
                first = slots.pop(0)
                partner = next((i for i, f in enumerate(slots) if f is not first), None)
                stated = [first] if partner is None else [first, slots.pop(partner)]
                title = " ".join(entity.name) if titled else " ".join(self.filler_words(2))
                body = self.fact_body(entity, stated, early)
                documents.append(RawDocument(f"{doc_prefix}-p{len(documents)}", title, body))
        return documents

    def fact_body(self, entity: _Entity, facts: Sequence[_Fact], early: bool) -> str:
        length = int(self.rng.integers(70, 96))
        half = length / 2
        if early:
            starts = [int(self.rng.integers(0, 7))]
            if len(facts) > 1:
                starts.append(starts[0] + 5 + int(self.rng.integers(0, 8)))
        else:
            starts = [int(math.ceil(half)) + 1 + int(self.rng.integers(0, 10))]
            if len(facts) > 1:
                starts.append(int(self.rng.integers(starts[0] + 5, length - 3)))

        words: List[str] = [""] * length
        for start, fact in zip(starts, facts):
            words[start:start + 4] = [fact.relation, entity.first, entity.last, fact.answer]
        fill = iter(self.filler_words(length))
        return " ".join(w if w else next(fill) for w in words)

    def hub_documents(self, doc_prefix: str, entity: _Entity) -> List[RawDocument]:
        documents = []
        for j in range(int(self.rng.integers(self.spec.min_hubs, self.spec.max_hubs + 1))):
            specials = [entity.first, entity.first, entity.last, entity.last] + [f.relation for f in entity.facts]
            specials = [specials[i] for i in self.rng.permutation(len(specials))]
            # Inner gaps of at least one filler word keep query bigrams out of hubs;
            # entities with many facts stretch the hub to fit them
            length = max(int(self.rng.integers(25, 46)), 2 * len(specials) - 1)
            fillers = length - len(specials)
            extra = fillers - (len(specials) - 1)
            cuts = np.sort(self.rng.integers(0, extra + 1, size=len(specials)))
            gaps = np.diff(np.concatenate([[0], cuts, [extra]]))
            words: List[str] = []
            for i, special in enumerate(specials):
                words.extend(self.filler_words(int(gaps[i]) + (1 if i > 0 else 0)))
                words.append(special)
            words.extend(self.filler_words(int(gaps[-1])))
            title = f"{entity.first} {entity.last} {self.filler_words(1)[0]}"
            documents.append(RawDocument(f"{doc_prefix}-h{j}", title, " ".join(words)))
        return documents

    def background_documents(self) -> List[RawDocument]:
        documents = []
        for j in range(self.spec.background_docs):
            length = int(self.rng.integers(120, 281))
            words = self.filler_words(length)
            for i in np.flatnonzero(self.rng.random(length) < 0.02):
                words[i] = RELATIONS[int(self.rng.integers(0, len(RELATIONS)))]
            documents.append(RawDocument(f"bg{j:05d}", " ".join(self.filler_words(2)), " ".join(words)))
        return documents

    def roster(self) -> List[AgentDescriptor]:
        agents = []
        for tid, utility in TASKS[:self.spec.num_tasks]:
            for mid, kind, k in MODELS:
                agents.append(AgentDescriptor(
                    agent_id=f"{tid}-{mid}",
                    tid=tid,
                    mid=mid,
                    k=k,
                    utility_kind=utility,
                    oracle=OracleAgentSpec(kind=kind, noise_rate=self.spec.noise_rate, seed=self.spec.seed + len(agents)),
                ))
        return agents

    def build(self) -> Benchmark:
        benchmark = Benchmark(spec=self.spec)
        sizes = self.spec.split_sizes()
        num_facts = sum(sizes.values())

        for tid, _ in TASKS[:self.spec.num_tasks]:
            entities = self.entities(tid, num_facts)
            facts: List[Tuple[_Entity, _Fact]] = []
            for e_index, entity in enumerate(entities):
                prefix = f"{tid}-e{e_index:04d}"
                benchmark.documents.extend(self.fact_documents(prefix, entity))
                benchmark.documents.extend(self.hub_documents(prefix, entity))
                facts.extend((entity, fact) for fact in entity.facts)

            order = self.rng.permutation(len(facts))
            splits: Dict[str, List[QueryInstance]] = {}
            offset = 0
            for split in SPLITS:
                chosen = sorted(order[offset:offset + sizes[split]])
                offset += sizes[split]
                splits[split] = [
                    QueryInstance(
                        query_id=facts[i][1].query_id,
                        input=f"{facts[i][1].question_word} {facts[i][1].relation} {facts[i][0].first} {facts[i][0].last}",
                        answers=[facts[i][1].answer],
                    )
                    for i in chosen
                ]
            benchmark.queries[tid] = splits

        benchmark.documents.extend(self.background_documents())
        benchmark.agents = self.roster()
        logger.info(f"Generated {len(benchmark.documents)} documents, {len(benchmark.agents)} agents, "
                    f"{num_facts} queries per task")
        return benchmark


def generate_benchmark(spec: BenchmarkSpec) -> Benchmark:
    return _Generator(spec).build()


def write_benchmark(benchmark: Benchmark, out_dir: Union[str, Path]) -> Path:
    """
    Write corpus.tsv, roster.json, queries/<task>/<split>.jsonl and a
    run_config.json wired to them. Returns the run config path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tsv(benchmark.documents, out / "corpus.tsv")
    save_roster(benchmark.agents, out / "roster.json")
    for tid, splits in benchmark.queries.items():
        (out / "queries" / tid).mkdir(parents=True, exist_ok=True)
        for split, queries in splits.items():
            write_queries(queries, out / "queries" / tid / f"{split}.jsonl")

    write_json(benchmark.spec.model_dump(mode="json"), out / "benchmark.json")
    config_path = out / "run_config.json"
    write_json({
        "corpus": "corpus.tsv",
        "roster": "roster.json",
        "queries_dir": "queries",
        "output_dir": "run",
        "seed": benchmark.spec.seed,
    }, config_path)
    logger.info(f"Benchmark written to {out}")
    return config_path
