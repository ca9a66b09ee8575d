"""
Tests for evaluation, domain-shift diagnostics and the experiment matrix.
"""

import csv
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from config import RunConfig, parse_run_config
from corpus import PassageStore, QAPair
from dense_index import build_dense
from encoder import init_params
from errors import DataError
from experiments import (
    MatrixInputs,
    MatrixRow,
    RetrievalRun,
    bm25_run,
    dense_run,
    load_stopwords,
    pretrain_epochs,
    question_token_coverage,
    read_questions,
    read_run,
    render_table,
    run_matrix,
    summarize_rows,
    top_vocabulary,
    topk_accuracy,
    vocab_overlap,
    write_csv,
    write_run,
)
from lexical_index import build_index
from toyworld import make_world


@pytest.fixture
def matrix_config():
    """Smallest run configuration that still exercises both stages."""
    return parse_run_config({
        'generator': {'n_questions': 2},
        'trainer': {
            'encoder': {'embed_dim': 4, 'hidden_dim': 8, 'out_dim': 4, 'vocab_hash_buckets': 256},
            'pretrain': {'epochs': 1, 'batch_size': 8},
            'finetune': {'epochs': 2, 'batch_size': 8},
        },
        'eval': {'ks': [1, 5, 20], 'depth': 20},
    })


@pytest.fixture
def matrix_inputs(small_world, small_world_store):
    return MatrixInputs(small_world_store, small_world.train_qa, small_world.test_qa)


class TestTopkAccuracy:
    """Test top-k retrieval accuracy."""

    def test_four_question_fixture(self, four_question_fixture):
        store, qa, rankings = four_question_fixture
        run = RetrievalRun('bm25', [pair.question for pair in qa], rankings, depth=26)

        report = topk_accuracy(run, qa, [20, 1, 5, 25], store)

        assert report.accuracy == {1: 0.25, 5: 0.5, 20: 0.5, 25: 0.75}
        assert report.question_count == 4
        assert report.to_dict()['accuracy'] == {'1': 0.25, '5': 0.5, '20': 0.5, '25': 0.75}

    def test_k_beyond_depth(self, four_question_fixture):
        store, qa, rankings = four_question_fixture
        run = RetrievalRun('dense', [pair.question for pair in qa], rankings, depth=10)

        with pytest.raises(DataError, match='exceeds the run depth'):
            topk_accuracy(run, qa, [1, 20], store)

    def test_run_must_match_questions(self, four_question_fixture):
        store, qa, rankings = four_question_fixture
        shifted = RetrievalRun('bm25', ['other'] + [p.question for p in qa[1:]], rankings, depth=26)

        with pytest.raises(DataError, match='does not match'):
            topk_accuracy(shifted, qa, [1], store)
        with pytest.raises(DataError, match='covers 3 questions'):
            topk_accuracy(RetrievalRun('bm25', [p.question for p in qa[:3]], rankings[:3], 26), qa, [1], store)

    def test_run_file(self, temp_dir, four_question_fixture):
        store, qa, rankings = four_question_fixture
        run = RetrievalRun('bm25', [pair.question for pair in qa], rankings, depth=26)
        path = f'{temp_dir}/run.jsonl'
        write_run(path, run)

        assert read_run(path) == run
        assert read_questions(path) == [pair.question for pair in qa]

    def test_unknown_system(self):
        with pytest.raises(DataError):
            RetrievalRun('tfidf', [], [], 10)

    def test_bm25_and_dense_runs(self, sample_store, tiny_encoder_config):
        qa = [QAPair('who designed the bridge', ('Anna Keller',), 'd1:0')]
        run = bm25_run(build_index(sample_store), qa, depth=3)

        assert run.rankings[0][0].passage_id == 'd1:0'
        assert topk_accuracy(run, qa, [1], sample_store).accuracy == {1: 1.0}

        model = init_params(tiny_encoder_config)
        dense = dense_run(model, build_dense(model, sample_store), qa, depth=4, system='dpr')
        assert dense.system == 'dpr'
        assert sorted(hit.passage_id for hit in dense.rankings[0]) == sample_store.ids()


class TestDomainShift:
    """Test vocabulary overlap and question-token coverage."""

    def test_overlap_oracles(self):
        a = ['river', 'bank', 'river', 'flood']
        b = ['kinase', 'protein', 'protein']

        assert vocab_overlap(a, a) == 1.0
        assert vocab_overlap(a, b) == 0.0
        assert vocab_overlap(['x', 'x', 'y'], ['y', 'z']) == 0.5
        assert vocab_overlap(['x', 'x', 'y'], ['y', 'z'], top_n=1) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.sampled_from('abcdefghij'), min_size=1, max_size=40),
        st.lists(st.sampled_from('fghijklmno'), min_size=1, max_size=40),
        st.integers(min_value=1, max_value=12),
    )
    def test_overlap_matches_set_computation(self, a, b, top_n):
        """Test vocab_overlap against a direct count-and-intersect computation."""
        def top(tokens):
            counts = Counter(tokens)
            return set(sorted(counts, key=lambda t: (-counts[t], t))[:top_n])

        expected = len(top(a) & top(b)) / min(len(top(a)), len(top(b)))

        assert vocab_overlap(a, b, top_n) == pytest.approx(expected)
        assert vocab_overlap(b, a, top_n) == pytest.approx(expected)

    def test_overlap_is_symmetric(self, small_world):
        bio = make_world('biomedical', n_entities=60, n_train=5, n_test=5, seed=2)
        general_tokens = [p.text.lower() for p in small_world.passages]
        bio_tokens = [p.text.lower() for p in bio.passages]

        forward = vocab_overlap(' '.join(general_tokens).split(), ' '.join(bio_tokens).split(), top_n=50)
        backward = vocab_overlap(' '.join(bio_tokens).split(), ' '.join(general_tokens).split(), top_n=50)
        assert forward == backward

    def test_top_vocabulary_ties(self):
        assert top_vocabulary(['b', 'a', 'c', 'c', 'the'], 2, frozenset({'the'})) == ['c', 'a']

    def test_overlap_needs_tokens(self):
        with pytest.raises(DataError):
            vocab_overlap(['the'], ['a'], stopwords=frozenset({'the'}))

    def test_stopwords(self):
        stopwords = load_stopwords()

        assert len(stopwords) == 179
        assert {'the', 'when', 'who', 'is'} <= stopwords
        assert not any(word.startswith('#') for word in stopwords)

    def test_question_token_coverage(self, sample_store):
        qa = [
            QAPair('bridge opened when', ('1932',), 'd1:0'),
            QAPair('museum paintings stolen', ('3000',), 'd2:0'),
            QAPair('what is the', ('x',), 'd3:0'),
        ]

        coverage = question_token_coverage(qa, sample_store, load_stopwords())

        assert coverage == pytest.approx((1.0 + 2 / 3) / 2)

    def test_coverage_needs_content_words(self, sample_store):
        with pytest.raises(DataError, match='non-stopword'):
            question_token_coverage([QAPair('what is it', ('x',), 'd1:0')], sample_store, load_stopwords())


class TestMatrix:
    """Test the experiment matrix."""

    def test_pretrain_epochs(self):
        assert pretrain_epochs(100, 32, 6, None) == 6
        assert pretrain_epochs(100, 32, 6, 20) == 5
        assert pretrain_epochs(1000, 32, 6, 5) == 1
        with pytest.raises(DataError):
            pretrain_epochs(100, 32, 6, 0)

    def test_matrix_shape_and_reproducibility(self, matrix_inputs, matrix_config):
        rows = run_matrix(matrix_inputs, sizes=[0, 10], seeds=[1], run_config=matrix_config)

        assert [(row.system, row.size) for row in rows] == [
            ('bm25', 0), ('dpr', 0), ('bm25', 10), ('dpr', 10), ('augdpr', 10),
        ]
        assert rows[0].accuracy == rows[2].accuracy
        assert rows[1].accuracy == rows[3].accuracy
        assert all(row.question_count == 20 for row in rows)
        assert rows[-1].stage == 'pretrain+finetune'
        assert run_matrix(matrix_inputs, sizes=[0, 10], seeds=[1], run_config=matrix_config) == rows

    def test_repeated_seeds_reuse_rows(self, matrix_inputs, matrix_config):
        rows = run_matrix(matrix_inputs, sizes=[0], seeds=[3, 3], run_config=matrix_config, with_random=True)

        assert [row.system for row in rows] == ['bm25', 'dpr', 'random'] * 2
        assert rows[:3] == rows[3:]

    def test_out_of_domain_rows(self, matrix_inputs, matrix_config):
        bio = make_world('biomedical', n_entities=40, n_train=5, n_test=8, seed=4)
        inputs = MatrixInputs(
            matrix_inputs.passages, matrix_inputs.train_qa, matrix_inputs.test_qa, PassageStore(bio.passages), bio.test_qa
        )

        rows = run_matrix(inputs, sizes=[0], seeds=[1], run_config=matrix_config)

        assert [(row.system, row.domain) for row in rows] == [
            ('bm25', 'in'), ('bm25', 'ood'), ('dpr', 'in'), ('dpr', 'ood'),
        ]
        assert rows[1].question_count == 8

    def test_invalid_sizes(self, matrix_inputs, matrix_config):
        with pytest.raises(DataError, match='ascending'):
            run_matrix(matrix_inputs, sizes=[10, 0], seeds=[1], run_config=matrix_config)
        with pytest.raises(DataError, match='exceeds'):
            run_matrix(matrix_inputs, sizes=[10_000], seeds=[1], run_config=matrix_config)

    def test_pool_size_sweep(self, matrix_config):
        """Test sizes 100, 200 and 400 on a 500-passage world."""
        world = make_world('general', n_entities=500, n_train=50, n_test=50, seed=3)
        inputs = MatrixInputs(PassageStore(world.passages), world.train_qa, world.test_qa)

        rows = run_matrix(inputs, sizes=[100, 200, 400], seeds=[1], run_config=matrix_config)

        assert [(row.system, row.size) for row in rows if row.system == 'augdpr'] == [
            ('augdpr', 100), ('augdpr', 200), ('augdpr', 400),
        ]
        for row in rows:
            assert row.accuracy[1] <= row.accuracy[5] <= row.accuracy[20]
        rerun = run_matrix(inputs, sizes=[200], seeds=[1], run_config=matrix_config)
        assert rerun == [row for row in rows if row.size == 200]

    def test_resume_reuses_stored_cells(self, matrix_inputs, matrix_config, temp_db, mocker):
        rows = run_matrix(matrix_inputs, sizes=[0, 5], seeds=[2], run_config=matrix_config, store=temp_db)
        assert temp_db.get_cell_count() == len(rows)

        run_seed = mocker.patch('experiments._run_seed', side_effect=AssertionError('recomputed'))
        resumed = run_matrix(
            matrix_inputs, sizes=[0, 5], seeds=[2], run_config=matrix_config, store=temp_db, resume=True
        )

        assert resumed == rows
        run_seed.assert_not_called()


class TestReporting:
    """Test matrix summaries and output files."""

    @pytest.fixture
    def rows(self):
        return [
            MatrixRow('bm25', 'none', 0, 1, 'in', {1: 0.2, 5: 0.4}, 10),
            MatrixRow('bm25', 'none', 0, 2, 'in', {1: 0.4, 5: 0.6}, 10),
        ]

    def test_summarize_rows(self, rows):
        summary = summarize_rows(rows)

        assert len(summary) == 1
        assert summary[0].seed is None
        assert summary[0].accuracy == pytest.approx({1: 0.3, 5: 0.5})

    def test_render_table(self, rows):
        table = render_table(summarize_rows(rows)).splitlines()

        assert table[0].split() == ['System', 'Stage', 'Size', 'Seed', 'Domain', 'Top-1', 'Top-5']
        assert table[2].split() == ['bm25', 'none', '0', 'mean', 'in', '30.0', '50.0']

    def test_write_csv(self, temp_dir, rows):
        path = f'{temp_dir}/matrix.csv'
        write_csv(path, rows)

        with open(path, newline='') as f:
            records = list(csv.DictReader(f))
        assert records[1]['seed'] == '2'
        assert records[1]['top5'] == '0.6'

    def test_row_dict_round_trip(self, rows):
        assert MatrixRow.from_dict(rows[0].to_dict()) == rows[0]


class TestDeskReproduction:
    """Test the pretraining gain on the desk-scale world at default settings."""

    def test_pretraining_beats_finetune_only(self):
        world = make_world('general', n_entities=500, n_train=50, n_test=50, overlap=0.5, seed=0)
        inputs = MatrixInputs(PassageStore(world.passages), world.train_qa, world.test_qa)
        seeds = [1, 2, 3, 4, 5]

        rows = run_matrix(inputs, sizes=[200], seeds=seeds, run_config=RunConfig(), with_random=True)

        top5 = {(row.system, row.seed): row.accuracy[5] for row in rows}
        mean = {system: sum(top5[system, seed] for seed in seeds) / len(seeds) for system in ('dpr', 'augdpr', 'random')}
        assert mean['augdpr'] >= mean['dpr']
        assert sum(top5['augdpr', seed] >= top5['dpr', seed] for seed in seeds) >= 4
        assert mean['dpr'] > mean['random']
        assert mean['augdpr'] > mean['random']
