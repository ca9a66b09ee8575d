"""
Tests for answer extraction, truncated sampling and synthetic example generation.
"""

import numpy as np
import pytest

from corpus import Document, PassageStore, chunk_document, contains_answer
from errors import DataError
from generator import (
    CandidateWeights,
    SamplerConfig,
    extract_answer_candidates,
    generate_examples,
    generate_pool,
    generate_question,
    read_synthetic,
    sample_negative,
    sample_truncated,
    truncated_distribution,
    write_synthetic,
)
from lexical_index import build_index
from seeding import derive_rng


def single_passage(text):
    return chunk_document(Document('t', text))[0]


class TestTruncatedSampling:
    """Test top-k and top-p truncation."""

    def test_no_truncation_keeps_everything(self):
        dist = truncated_distribution([4, 3, 2, 1], SamplerConfig(top_p=1.0, top_k=10))

        np.testing.assert_allclose(dist, [0.4, 0.3, 0.2, 0.1])

    def test_top_p_cuts_the_tail(self):
        dist = truncated_distribution([5, 3, 1, 1], SamplerConfig(top_p=0.75, top_k=10))

        np.testing.assert_allclose(dist, [5 / 8, 3 / 8, 0, 0])

    def test_top_k_one_is_greedy(self):
        dist = truncated_distribution([1, 7, 2], SamplerConfig(top_p=1.0, top_k=1))

        np.testing.assert_allclose(dist, [0, 1, 0])

    def test_ties_keep_lower_index(self):
        dist = truncated_distribution([1, 1, 1], SamplerConfig(top_p=1.0, top_k=2))

        np.testing.assert_allclose(dist, [0.5, 0.5, 0])

    def test_invalid_weights(self):
        with pytest.raises(DataError):
            truncated_distribution([0, 0], SamplerConfig())
        with pytest.raises(DataError):
            truncated_distribution([1, -1], SamplerConfig())
        with pytest.raises(DataError):
            SamplerConfig(top_p=0.0)
        with pytest.raises(DataError):
            SamplerConfig(top_k=0)

    def test_top_p_boundary_tolerates_rounding(self):
        dist = truncated_distribution([1] * 10, SamplerConfig(top_p=0.8, top_k=10))

        assert np.count_nonzero(dist) == 8
        np.testing.assert_allclose(dist[:8], 1 / 8)

    def test_hand_checked_truncations(self):
        np.testing.assert_allclose(
            truncated_distribution([0.5, 0.3, 0.2], SamplerConfig(top_p=1.0, top_k=2)), [0.625, 0.375, 0]
        )
        np.testing.assert_allclose(truncated_distribution([0.9, 0.1], SamplerConfig(top_p=0.5, top_k=10)), [1, 0])

    @pytest.mark.parametrize('weights, config', [
        ([2.0, 2.0, 1.5, 1.0], SamplerConfig(top_p=0.95, top_k=10)),
        ([2.0, 1.5, 1.5, 1.5, 1.0, 1.0], SamplerConfig(top_p=0.95, top_k=10)),
        ([3.0] + [1.0] * 11, SamplerConfig(top_p=0.95, top_k=10)),
        ([0.5, 0.25, 0.125, 0.0625, 0.03125, 0.03125], SamplerConfig(top_p=0.95, top_k=10)),
        ([1.0, 0.0, 2.0, 0.0, 4.0], SamplerConfig(top_p=0.95, top_k=10)),
        ([0.5, 0.3, 0.2], SamplerConfig(top_p=1.0, top_k=2)),
        ([0.9, 0.1], SamplerConfig(top_p=0.5, top_k=10)),
        ([5, 3, 1, 1], SamplerConfig(top_p=0.95, top_k=3)),
    ])
    def test_empirical_distribution_matches(self, weights, config):
        """Test 100k draws against the truncated distribution."""
        expected = truncated_distribution(weights, config)
        rng = derive_rng(0, 'sampler-test')

        counts = np.zeros(len(weights))
        for _ in range(100_000):
            counts[sample_truncated(weights, config, rng)] += 1
        empirical = counts / counts.sum()

        assert np.all(counts[expected == 0] == 0)
        assert 0.5 * np.abs(empirical - expected).sum() < 0.01


class TestAnswerCandidates:
    """Test heuristic answer extraction and question templates."""

    def test_year_question(self):
        passage = single_passage('Tanzania dates formally from 1964.')
        candidates = extract_answer_candidates(passage)

        assert [(c.surface, c.kind) for c in candidates] == [('1964', 'date_like')]
        assert generate_question(passage, candidates[0]) == 'when does tanzania dates formally from?'

    def test_capitalized_run_skips_sentence_initial_word(self):
        passage = single_passage('It was designed by Anna Keller.')
        candidates = extract_answer_candidates(passage)

        assert [(c.surface, c.kind) for c in candidates] == [('Anna Keller', 'capitalized_span')]
        assert generate_question(passage, candidates[0]) == 'who or what it was designed by?'

    def test_numbers_and_quotes(self):
        passage = single_passage('It carries 4 lanes. The motto is "ever upward" today.')
        candidates = {c.surface: c for c in extract_answer_candidates(passage)}

        assert candidates['4'].kind == 'number'
        assert candidates['ever upward'].kind == 'quoted_span'
        assert candidates['ever upward'].sentence_index == 1
        assert generate_question(passage, candidates['4']) == 'how many it carries lanes?'

    def test_custom_weights(self):
        passage = single_passage('It opened in 1932.')
        weights = CandidateWeights(date_like=7.0)

        assert extract_answer_candidates(passage, weights)[0].weight == 7.0
        with pytest.raises(DataError):
            CandidateWeights(number=0.0)

    def test_passage_without_candidates(self):
        passage = single_passage('nothing to ask here.')

        assert generate_examples(passage, 4, SamplerConfig(seed=1)) == []


class TestSyntheticPool:
    """Test pool generation and hard-negative mining."""

    def test_pool_is_deterministic_and_order_independent(self, sample_store):
        index = build_index(sample_store)
        sampler = SamplerConfig(seed=3)

        first = generate_pool(sample_store, index, 4, sampler)
        second = generate_pool(sample_store, index, 4, sampler)
        reversed_store = PassageStore(list(reversed(sample_store.passages())))
        third = generate_pool(reversed_store, index, 4, sampler)

        assert first == second
        assert sorted(first, key=lambda e: (e.passage_id, e.question)) == sorted(
            third, key=lambda e: (e.passage_id, e.question)
        )

    def test_pool_examples_answer_from_their_passage(self, sample_store):
        index = build_index(sample_store)
        examples = generate_pool(sample_store, index, 4, SamplerConfig(seed=5))

        assert examples
        for example in examples:
            passage = sample_store.get(example.passage_id)
            assert example.sentence.contains(example.answer.span)
            assert example.answer.span.text(passage.text) == example.answer.surface
            assert example.question.endswith('?')
            if example.negative_passage_id is not None:
                assert example.negative_passage_id != example.passage_id
                assert not contains_answer(sample_store.get(example.negative_passage_id), [example.answer.surface])

    def test_no_index_means_no_negatives(self, sample_store):
        examples = generate_pool(sample_store, None, 2, SamplerConfig(seed=5))

        assert all(example.negative_passage_id is None for example in examples)

    def test_sample_negative_excludes_answer_passages(self, sample_store):
        index = build_index(sample_store)
        rng = derive_rng(0, 'negatives')

        for _ in range(20):
            negative = sample_negative(index, 'the built in', ['1932'], 'd4:0', sample_store, rng)
            assert negative in {'d2:0', 'd3:0'} or negative is None
        assert sample_negative(index, 'zzz', ['x'], 'd1:0', sample_store, rng) is None

    def test_synthetic_file(self, temp_dir, sample_store):
        examples = generate_pool(sample_store, build_index(sample_store), 2, SamplerConfig(seed=1))
        path = f'{temp_dir}/synthetic.jsonl'
        write_synthetic(path, examples)

        assert read_synthetic(path) == examples

    def test_corrupt_synthetic_file(self, temp_dir):
        path = f'{temp_dir}/synthetic.jsonl'
        with open(path, 'w') as f:
            f.write('{"passage_id": "p"}\n')

        with pytest.raises(DataError, match='synthetic.jsonl:1'):
            read_synthetic(path)
