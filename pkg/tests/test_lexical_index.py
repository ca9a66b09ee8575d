"""
Tests for the BM25 inverted index.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corpus import Passage
from errors import DataError
from lexical_index import Bm25Params, InvertedIndex, ScoredHit, build_index, idf, search, tokenize


def make_passages(texts):
    return [Passage(id=f'p{i}', doc_id=f'p{i}', text=text, word_count=len(text.split())) for i, text in enumerate(texts)]


@pytest.fixture
def toy_index():
    return build_index(make_passages(['cat sat', 'cat cat dog', 'dog runs fast']))


def brute_force_score(texts, query, k1=1.2, b=0.75):
    """Direct BM25 over token lists, one score per text."""
    docs = [tokenize(t) for t in texts]
    avgdl = sum(len(d) for d in docs) / len(docs)
    scores = []
    for doc in docs:
        total = 0.0
        for token in set(tokenize(query)):
            tf = doc.count(token)
            if not tf:
                continue
            df = sum(token in d for d in docs)
            weight = math.log(1 + (len(docs) - df + 0.5) / (df + 0.5))
            total += weight * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(doc) / avgdl))
        scores.append(total)
    return scores


class TestTokenize:
    """Test query and passage tokenization."""

    def test_tokenize(self):
        assert tokenize("Hello, World! it's 1932_x") == ['hello', 'world', 'it', 's', '1932', 'x']


class TestBm25:
    """Test BM25 scoring and ranking."""

    def test_idf_is_nonnegative(self):
        assert idf(3, 3) > 0
        assert idf(3, 2) == pytest.approx(math.log(1.6))

    def test_known_score(self, toy_index):
        """Test the score of 'cat' against the first passage."""
        assert toy_index.score(['cat'], 0) == pytest.approx(0.523549, abs=1e-6)

    def test_search_ranking(self, toy_index):
        hits = search(toy_index, 'cat', 10)

        assert [hit.passage_id for hit in hits] == ['p1', 'p0']
        assert hits[0].score == pytest.approx(0.624305, abs=1e-6)

    def test_repeated_query_tokens_count_once(self, toy_index):
        assert toy_index.search('cat cat cat', 10) == toy_index.search('cat', 10)

    def test_no_matching_terms(self, toy_index):
        assert toy_index.search('elephant', 10) == []
        assert toy_index.search('', 10) == []

    def test_ties_break_by_ordinal(self):
        index = build_index(make_passages(['same words', 'other text', 'same words']))

        assert [hit.passage_id for hit in index.search('same', 5)] == ['p0', 'p2']

    def test_title_is_not_indexed(self):
        passage = Passage(id='a', doc_id='a', text='plain text', title='zebra', word_count=2)

        assert build_index([passage]).search('zebra', 5) == []

    def test_invalid_arguments(self, toy_index):
        with pytest.raises(DataError):
            toy_index.search('cat', 0)
        with pytest.raises(DataError):
            Bm25Params(k1=-1.0)
        with pytest.raises(DataError):
            Bm25Params(b=1.5)
        with pytest.raises(DataError, match='Duplicate passage id'):
            build_index(make_passages(['a']) * 2)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.lists(st.sampled_from('abcdef'), min_size=1, max_size=8).map(' '.join), min_size=1, max_size=12),
        st.lists(st.sampled_from('abcdefg'), min_size=1, max_size=4).map(' '.join),
    )
    def test_matches_brute_force(self, texts, query):
        """Test the index against a direct BM25 computation."""
        index = build_index(make_passages(texts))
        expected = brute_force_score(texts, query)
        # passage ids sort lexicographically, so map back through the index
        hits = index.search(query, len(texts))

        assert {hit.passage_id for hit in hits} == {f'p{i}' for i, s in enumerate(expected) if s > 0}
        for hit in hits:
            assert hit.score == pytest.approx(expected[int(hit.passage_id[1:])], rel=1e-9)
        assert all(a.score >= b.score for a, b in zip(hits, hits[1:]))


class TestIndexFiles:
    """Test index persistence."""

    def test_save_and_load(self, temp_dir, toy_index):
        path = f'{temp_dir}/bm25.json'
        toy_index.save(path)
        loaded = InvertedIndex.load(path)

        assert loaded.passage_ids == toy_index.passage_ids
        assert loaded.search('dog', 3) == toy_index.search('dog', 3)

    def test_load_rejects_other_files(self, temp_dir):
        path = f'{temp_dir}/bm25.json'
        with open(path, 'w') as f:
            f.write('{"format": "something-else"}')

        with pytest.raises(DataError, match='not a BM25 index'):
            InvertedIndex.load(path)

    def test_load_missing_file(self, temp_dir):
        with pytest.raises(DataError):
            InvertedIndex.load(f'{temp_dir}/missing.json')

    def test_hit_records(self):
        hit = ScoredHit.from_dict({'passage_id': 'p', 'score': 1.5})

        assert hit == ScoredHit('p', 1.5)
        with pytest.raises(DataError):
            ScoredHit.from_dict({'passage_id': 'p', 'score': 'nan'})

    def test_matches_brute_force_on_generated_fixture(self):
        """Test 50 queries over 200 generated passages, scores and full ordering."""
        rng = np.random.default_rng(5)
        vocabulary = [f'w{i}' for i in range(300)]
        # skewed word frequencies give a spread of document frequencies
        weights = 1.0 / np.arange(1, 301)
        weights /= weights.sum()
        texts = [' '.join(rng.choice(vocabulary, size=int(rng.integers(5, 60)), p=weights)) for _ in range(200)]
        queries = [' '.join(rng.choice(vocabulary, size=int(rng.integers(1, 6)), p=weights)) for _ in range(50)]
        index = build_index(make_passages(texts))

        for query in queries:
            expected = brute_force_score(texts, query)
            ranked = sorted((i for i, s in enumerate(expected) if s > 0), key=lambda i: (-expected[i], i))

            hits = index.search(query, len(texts))

            assert [hit.passage_id for hit in hits] == [f'p{i}' for i in ranked]
            for hit in hits:
                assert hit.score == pytest.approx(expected[int(hit.passage_id[1:])], abs=1e-9)
