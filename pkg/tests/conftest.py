"""
Test configuration and fixtures for the retrieval toolkit tests.
"""

import os
import tempfile

import pytest
from hypothesis import HealthCheck, settings

import config as config_module
from corpus import Document, PassageStore, QAPair, chunk_corpus
from database import DatabaseManager
from encoder import EncoderConfig
from lexical_index import ScoredHit
from toyworld import make_world

# the autouse environment fixture is function scoped; it only patches config paths
settings.register_profile('retro', suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile('retro')


@pytest.fixture(autouse=True)
def isolated_environment(tmp_path, monkeypatch):
    """Keep logs and the results store of every test inside its own temp directory."""
    monkeypatch.setattr(config_module.config, 'log_file', str(tmp_path / 'logs' / 'retro.log'))
    monkeypatch.setattr(config_module.config, 'db_url', f'sqlite:///{tmp_path / "results.db"}')
    monkeypatch.setattr(config_module.config, 'db_configured', False)
    monkeypatch.setattr(config_module.config, 'artifact_dir', str(tmp_path / 'artifacts'))
    monkeypatch.setattr('database._db_manager', None)
    yield


@pytest.fixture
def temp_dir():
    """Create a temporary directory."""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield temp_dir


@pytest.fixture
def temp_db():
    """Create a temporary results database for testing."""
    with tempfile.NamedTemporaryFile(suffix='.db', delete=False) as temp_file:
        temp_db_url = f'sqlite:///{temp_file.name}'
        temp_file_path = temp_file.name

    db_manager = DatabaseManager(temp_db_url)
    try:
        yield db_manager
    finally:
        if db_manager.engine:
            db_manager.engine.dispose()
        try:
            os.unlink(temp_file_path)
        except (OSError, PermissionError):
            pass


@pytest.fixture
def sample_documents():
    """Four short documents with dates, names and quantities."""
    return [
        Document('d1', 'The bridge opened in 1932. It was designed by Anna Keller. It carries 4 lanes.', 'Bridge'),
        Document('d2', 'The museum holds 3000 paintings. Its director is Paul Meyer.', 'Museum'),
        Document('d3', 'The river floods every spring. Farmers plant rice after the flood.', 'River'),
        Document('d4', 'The observatory was built in 1887 on Mount Hollis.', 'Observatory'),
    ]


@pytest.fixture
def sample_store(sample_documents):
    return PassageStore(chunk_corpus(sample_documents))


@pytest.fixture
def four_question_fixture():
    """
    Four questions whose answers first appear at ranks 1, 3, 21 and never.

    Passage 'gold' contains the answer "zebra"; every 'noise-*' passage does not.
    """
    from corpus import Passage

    def passage(pid: str, text: str) -> Passage:
        return Passage(id=pid, doc_id=pid, text=text, word_count=len(text.split()))

    store = PassageStore(
        [passage('gold', 'the zebra runs')] + [passage(f'noise-{i:02d}', f'plain field {i}') for i in range(30)]
    )
    noise = [f'noise-{i:02d}' for i in range(30)]

    def ranking(gold_rank):
        ids = list(noise[:25])
        if gold_rank is not None:
            ids.insert(gold_rank - 1, 'gold')
        return [ScoredHit(pid, float(100 - i)) for i, pid in enumerate(ids)]

    qa = [QAPair(f'question {i}', ('zebra',)) for i in range(4)]
    rankings = [ranking(1), ranking(3), ranking(21), ranking(None)]
    return store, qa, rankings


@pytest.fixture
def tiny_encoder_config():
    return EncoderConfig(embed_dim=4, hidden_dim=8, out_dim=4, vocab_hash_buckets=64, seed=3)


@pytest.fixture(scope='session')
def small_world():
    """A 120-entity general-domain world shared by the slower tests."""
    return make_world('general', n_entities=120, n_train=30, n_test=20, overlap=0.5, seed=11)


@pytest.fixture
def small_world_store(small_world):
    return PassageStore(small_world.passages)
