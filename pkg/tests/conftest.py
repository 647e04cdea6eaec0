import pytest
import asyncio
from app.benchmark import BenchmarkSpec, generate_benchmark
from app.corpus.passages import PassageStore, RawDocument
from app.ium.engine import SearchEngine
from app.storage.db import Database

def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale benchmark tests")

def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)

@pytest.fixture
def test_db():
    """Provide a test database instance"""
    db = Database("sqlite:///:memory:")
    yield db
    db.close()

@pytest.fixture
def event_loop():
    """Create an instance of the default event loop for the test session."""
    loop = asyncio.get_event_loop_policy().new_event_loop()
    yield loop
    loop.close()

@pytest.fixture
def toy_documents():
    """A handful of hand-written documents"""
    return [
        RawDocument("apple", "Apple Orchard", "the apple tree grows apple fruit in the orchard"),
        RawDocument("pear", "Pear Facts", "pear trees need cold winters and sunny summers"),
        RawDocument("river", "River Thames", "the river flows through the city toward the sea"),
        RawDocument("city", "Capital City", "the capital city of the region sits by the river"),
        RawDocument("fruit", "Fruit Market", "apple and pear sellers crowd the market every morning"),
    ]

@pytest.fixture
def toy_store(toy_documents):
    return PassageStore.from_documents(toy_documents)

@pytest.fixture
def toy_engine(toy_store):
    return SearchEngine.from_store(toy_store, first_stage_n=10)

@pytest.fixture(scope="session")
def small_spec():
    return BenchmarkSpec(
        seed=3,
        num_tasks=2,
        train_per_task=16,
        test_per_task=12,
        stream_per_task=12,
        min_hubs=3,
        max_hubs=6,
        background_docs=10,
        filler_vocabulary=300,
    )

@pytest.fixture(scope="session")
def small_benchmark(small_spec):
    """Two tasks, six agents, a few hundred passages"""
    return generate_benchmark(small_spec)

@pytest.fixture(scope="session")
def small_engine(small_benchmark):
    store = PassageStore.from_documents(small_benchmark.documents)
    return SearchEngine.from_store(store, first_stage_n=50)
