"""
Tests for corpus ingestion, chunking and answer matching.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corpus import (
    DEFAULT_MAX_WORDS,
    Document,
    Passage,
    PassageStore,
    QAPair,
    TextSpan,
    chunk_corpus,
    chunk_document,
    contains_answer,
    ingest_documents,
    normalize_answer,
    read_passages,
    read_qa,
    sentence_split,
    write_passages,
    write_qa,
)
from errors import DataError

WORDS = st.sampled_from(['alpha', 'Beta', 'gamma', '1932', 'J.', 'Smith', 'x', 'rice,', 'end.', 'why?', 'go!'])
TEXTS = st.lists(WORDS, min_size=1, max_size=400).map(' '.join)


class TestIngest:
    """Test corpus stream parsing."""

    def test_ingest_tsv(self):
        """Test TSV parsing with and without titles."""
        docs = ingest_documents(b'a\tFirst text.\tTitle A\n\nb\tSecond text.\n', 'tsv')

        assert [d.id for d in docs] == ['a', 'b']
        assert docs[0].title == 'Title A'
        assert docs[1].title == ''

    def test_ingest_jsonl(self):
        docs = ingest_documents(b'{"id": 7, "text": "Seven.", "title": null}\n', 'jsonl')

        assert docs == [Document('7', 'Seven.', '')]

    def test_ingest_rejects_bad_utf8(self):
        with pytest.raises(DataError, match='UTF-8'):
            ingest_documents(b'a\t\xff\xfe\n', 'tsv')

    def test_ingest_reports_line_numbers(self):
        with pytest.raises(DataError, match='line 2'):
            ingest_documents(b'a\tfine\nbroken line\n', 'tsv')
        with pytest.raises(DataError, match='line 1'):
            ingest_documents(b'{"id": "a"}\n', 'jsonl')

    def test_ingest_rejects_empty_text_and_duplicates(self):
        with pytest.raises(DataError, match='empty text'):
            ingest_documents(b'a\t   \n', 'tsv')
        with pytest.raises(DataError, match='Duplicate document id'):
            ingest_documents(b'a\tone\na\ttwo\n', 'tsv')

    def test_unknown_format(self):
        with pytest.raises(DataError):
            ingest_documents(b'', 'xml')


class TestSentenceSplit:
    """Test sentence boundary detection."""

    def test_basic_split(self):
        text = 'It rained. Did it? Yes!  Then stopped'
        spans = sentence_split(text)

        assert [s.text(text) for s in spans] == ['It rained.', 'Did it?', 'Yes!', 'Then stopped']

    def test_initials_do_not_end_sentences(self):
        text = 'It was built by J. Smith in 1900. It stands.'

        assert [s.text(text) for s in sentence_split(text)] == ['It was built by J. Smith in 1900.', 'It stands.']

    def test_span_validation(self):
        with pytest.raises(DataError):
            TextSpan(3, 3)
        assert TextSpan(0, 5).contains(TextSpan(1, 2))


class TestChunking:
    """Test sentence-preserving chunking."""

    def test_sentences_are_packed_greedily(self):
        doc = Document('d', 'one two three. four five. six seven eight nine.')
        passages = chunk_document(doc, max_words=5)

        assert [p.text for p in passages] == ['one two three. four five.', 'six seven eight nine.']
        assert [p.id for p in passages] == ['d:0', 'd:1']
        assert passages[0].sentence_text(1) == 'four five.'

    def test_long_sentence_is_cut_at_word_boundaries(self):
        doc = Document('d', 'a b c d e f g. h.')
        passages = chunk_document(doc, max_words=3)

        assert [p.text for p in passages] == ['a b c', 'd e f', 'g. h.']
        assert all(p.word_count <= 3 for p in passages)

    def test_chunk_corpus_keeps_document_order(self, sample_documents):
        passages = chunk_corpus(sample_documents)

        assert [p.doc_id for p in passages] == ['d1', 'd2', 'd3', 'd4']
        assert passages[0].title == 'Bridge'

    def test_invalid_max_words(self):
        with pytest.raises(DataError):
            chunk_document(Document('d', 'text'), max_words=0)

    @settings(max_examples=60, deadline=None)
    @given(TEXTS, st.integers(min_value=1, max_value=130))
    def test_chunks_respect_budget_and_keep_every_word(self, text, max_words):
        """Test that chunks stay within max_words and concatenate back to the document's words."""
        passages = chunk_document(Document('doc', text), max_words=max_words)

        assert all(1 <= p.word_count <= max_words for p in passages)
        assert [w for p in passages for w in p.text.split()] == text.split()
        for p in passages:
            assert p.word_count == len(p.text.split())
            assert all(span.end <= len(p.text) for span in p.sentence_spans)

    def test_thousand_generated_documents(self):
        """Test budget, word preservation and ids over 1000 seeded documents."""
        rng = np.random.default_rng(17)
        vocabulary = ['alpha', 'Beta', 'gamma', '1932', 'J.', 'Smith', 'x', 'rice,', 'end.', 'why?', 'go!']
        documents = [
            Document(f'd{i}', ' '.join(rng.choice(vocabulary, size=int(rng.integers(1, 400)))))
            for i in range(1000)
        ]

        passages = chunk_corpus(documents, max_words=DEFAULT_MAX_WORDS)

        by_doc = {}
        for passage in passages:
            by_doc.setdefault(passage.doc_id, []).append(passage)
        assert list(by_doc) == [d.id for d in documents]
        for document in documents:
            chunks = by_doc[document.id]
            assert [p.id for p in chunks] == [f'{document.id}:{n}' for n in range(len(chunks))]
            assert all(1 <= p.word_count <= DEFAULT_MAX_WORDS for p in chunks)
            assert [w for p in chunks for w in p.text.split()] == document.text.split()


class TestAnswerMatching:
    """Test normalization and answer containment."""

    def test_normalize_answer(self):
        assert normalize_answer('  The  Zebra-Crossing! ') == 'the zebra crossing'
        assert normalize_answer('ＡＢＣ') == 'abc'

    @given(st.text(alphabet=st.characters(whitelist_categories=('Lu', 'Ll', 'Nd', 'Po', 'Pd', 'Zs')), max_size=40))
    def test_normalize_is_idempotent(self, text):
        once = normalize_answer(text)
        assert normalize_answer(once) == once

    def test_contains_answer_is_token_aligned(self):
        assert contains_answer('The bridge opened in 1932.', ['1932'])
        assert contains_answer('Designed by Anna  Keller.', ['anna keller'])
        assert not contains_answer('The year 19321 was odd.', ['1932'])
        assert not contains_answer('Anna met Keller.', ['Anna Keller'])

    def test_contains_answer_ignores_title(self):
        passage = Passage(id='p', doc_id='p', text='No answer here', title='Zebra', word_count=3)

        assert not contains_answer(passage, ['zebra'])

    def test_contains_answer_needs_answers(self):
        with pytest.raises(DataError):
            contains_answer('text', [])

    def test_qa_pair_rejects_empty_answers(self):
        with pytest.raises(DataError):
            QAPair('q', ())
        with pytest.raises(DataError):
            QAPair('q', ('...',))


class TestPassageFiles:
    """Test passage and QA persistence."""

    def test_passages_round_trip(self, temp_dir, sample_store):
        path = f'{temp_dir}/passages.jsonl'
        write_passages(path, sample_store)

        loaded = read_passages(path)
        assert loaded.passages() == sample_store.passages()

    def test_corrupt_passage_record(self, temp_dir):
        path = f'{temp_dir}/passages.jsonl'
        with open(path, 'w') as f:
            f.write('{"id": "p", "doc_id": "p", "text": "two words", "word_count": 5}\n')

        with pytest.raises(DataError, match='word_count'):
            read_passages(path)

    def test_qa_file(self, temp_dir):
        path = f'{temp_dir}/qa.jsonl'
        write_qa(path, [QAPair('who?', ('Anna Keller',), 'd1:0'), QAPair('when?', ('1887',))])

        pairs = read_qa(path)
        assert pairs[0].gold_passage_id == 'd1:0'
        assert pairs[1].gold_passage_id is None

    def test_store_lookup(self, sample_store):
        assert 'd1:0' in sample_store
        assert sample_store['d1:0'].doc_id == 'd1'
        with pytest.raises(DataError, match='Unknown passage id'):
            sample_store.get('nope')
        with pytest.raises(DataError, match='Duplicate passage id'):
            PassageStore(sample_store.passages() * 2)
