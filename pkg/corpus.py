"""
Corpus ingestion and the passage data model.
Handles document loading, sentence-preserving chunking and answer matching.
"""

import io
import json
import logging
import re
import unicodedata
from collections import OrderedDict
from dataclasses import dataclass
from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from artifacts import iter_jsonl, write_jsonl
from errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_MAX_WORDS = 120
INPUT_FORMATS = ("tsv", "jsonl")

_TERMINATOR = re.compile(r"[.!?](?=\s|$)")
_NON_SPACE = re.compile(r"\S")


@dataclass(frozen=True)
class TextSpan:
    """Half-open character range [start, end) within some text."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise DataError(f"Invalid span ({self.start}, {self.end})")

    def text(self, source: str) -> str:
        return source[self.start:self.end]

    def contains(self, other: "TextSpan") -> bool:
        return self.start <= other.start and other.end <= self.end

    def to_list(self) -> List[int]:
        return [self.start, self.end]

    @classmethod
    def from_list(cls, value: Sequence[int]) -> "TextSpan":
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise DataError(f"Span must be a [start, end] pair, got {value!r}")
        return cls(int(value[0]), int(value[1]))


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    title: str = ""

    def __post_init__(self):
        if not self.id:
            raise DataError("Document id must be nonempty")
        if not self.text or not self.text.strip():
            raise DataError(f"Document {self.id} has empty text")


@dataclass(frozen=True)
class Passage:
    """Chunked unit of retrieval text with provenance and sentence spans."""

    id: str
    doc_id: str
    text: str
    title: str = ""
    sentence_spans: Tuple[TextSpan, ...] = ()
    word_count: int = 0

    def sentence_text(self, index: int) -> str:
        return self.sentence_spans[index].text(self.text)

    def to_dict(self) -> Dict[str, object]:
        return {
            "id": self.id,
            "doc_id": self.doc_id,
            "title": self.title,
            "text": self.text,
            "sentence_spans": [span.to_list() for span in self.sentence_spans],
            "word_count": self.word_count,
        }

    @classmethod
    def from_dict(cls, record: Dict[str, object]) -> "Passage":
        try:
            text = str(record["text"])
            spans = tuple(TextSpan.from_list(span) for span in record.get("sentence_spans", []))
            passage = cls(
                id=str(record["id"]),
                doc_id=str(record["doc_id"]),
                text=text,
                title=str(record.get("title", "")),
                sentence_spans=spans,
                word_count=int(record.get("word_count", len(text.split()))),
            )
        except KeyError as e:
            raise DataError(f"Passage record missing field {e.args[0]!r}") from e
        if any(span.end > len(text) for span in spans):
            raise DataError(f"Passage {passage.id}: sentence span outside text")
        if passage.word_count != len(text.split()):
            raise DataError(f"Passage {passage.id}: word_count does not match text")
        return passage


@dataclass(frozen=True)
class QAPair:
    question: str
    answers: Tuple[str, ...]
    gold_passage_id: Optional[str] = None

    def __post_init__(self):
        if not self.answers:
            raise DataError(f"Question {self.question!r} has no answers")
        for answer in self.answers:
            if not normalize_answer(answer):
                raise DataError(f"Question {self.question!r} has an empty answer")

    def to_dict(self) -> Dict[str, object]:
        record: Dict[str, object] = {"question": self.question, "answers": list(self.answers)}
        if self.gold_passage_id is not None:
            record["gold_passage_id"] = self.gold_passage_id
        return record

    @classmethod
    def from_dict(cls, record: Dict[str, object]) -> "QAPair":
        question = record.get("question")
        answers = record.get("answers")
        if not isinstance(question, str) or not question.strip():
            raise DataError("QA record needs a nonempty 'question' string")
        if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
            raise DataError("QA record needs 'answers' as a list of strings")
        gold = record.get("gold_passage_id")
        return cls(question=question, answers=tuple(answers), gold_passage_id=None if gold is None else str(gold))


class PassageStore:
    """Ordered mapping of passage id to Passage."""

    def __init__(self, passages: Iterable[Passage] = ()):
        self._passages: "OrderedDict[str, Passage]" = OrderedDict()
        for passage in passages:
            if passage.id in self._passages:
                raise DataError(f"Duplicate passage id: {passage.id}")
            self._passages[passage.id] = passage

    def __len__(self) -> int:
        return len(self._passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._passages.values())

    def __contains__(self, passage_id: object) -> bool:
        return passage_id in self._passages

    def __getitem__(self, passage_id: str) -> Passage:
        return self.get(passage_id)

    def get(self, passage_id: str) -> Passage:
        try:
            return self._passages[passage_id]
        except KeyError:
            raise DataError(f"Unknown passage id: {passage_id}") from None

    def ids(self) -> List[str]:
        return list(self._passages.keys())

    def passages(self) -> List[Passage]:
        return list(self._passages.values())


def _decode(source: Union[BinaryIO, bytes]) -> str:
    raw = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        return bytes(raw).decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"Input is not valid UTF-8 (byte offset {e.start})") from e


def _parse_tsv_line(line: str, line_number: int) -> Document:
    fields = line.split("\t")
    if len(fields) < 2 or len(fields) > 3:
        raise DataError(f"line {line_number}: expected id<TAB>text[<TAB>title], got {len(fields)} fields")
    title = fields[2] if len(fields) == 3 else ""
    try:
        return Document(id=fields[0].strip(), text=fields[1], title=title)
    except DataError as e:
        raise DataError(f"line {line_number}: {e}") from e


def _parse_jsonl_line(line: str, line_number: int) -> Document:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"line {line_number}: invalid JSON: {e.msg}") from e
    if not isinstance(record, dict):
        raise DataError(f"line {line_number}: expected a JSON object")
    doc_id, text, title = record.get("id"), record.get("text"), record.get("title", "")
    if not isinstance(doc_id, (str, int)) or isinstance(doc_id, bool) or not isinstance(text, str):
        raise DataError(f"line {line_number}: record needs 'id' and 'text'")
    if title is None:
        title = ""
    if not isinstance(title, str):
        raise DataError(f"line {line_number}: 'title' must be a string")
    try:
        return Document(id=str(doc_id), text=text, title=title)
    except DataError as e:
        raise DataError(f"line {line_number}: {e}") from e


def ingest_documents(source: Union[BinaryIO, bytes], fmt: str) -> List[Document]:
    """
    Parse a UTF-8 corpus stream into documents, in stream order.

    Args:
        source: Binary stream or bytes
        fmt: 'tsv' (id<TAB>text<TAB>title) or 'jsonl' ({"id", "text", "title"})

    Returns:
        List of Document objects
    """
    if fmt not in INPUT_FORMATS:
        raise DataError(f"Unknown corpus format: {fmt}")
    parse = _parse_tsv_line if fmt == "tsv" else _parse_jsonl_line
    documents: List[Document] = []
    seen = set()
    for line_number, line in enumerate(io.StringIO(_decode(source)), start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        document = parse(line, line_number)
        if document.id in seen:
            raise DataError(f"Duplicate document id: {document.id}")
        seen.add(document.id)
        documents.append(document)
    logger.info(f"Ingested {len(documents)} documents ({fmt})")
    return documents


def _next_non_space(text: str, position: int) -> int:
    match = _NON_SPACE.search(text, position)
    return match.start() if match else len(text)


def _is_initial(text: str, dot: int) -> bool:
    """True for a period directly after a lone uppercase letter, as in 'J. Smith'."""
    if dot < 1 or text[dot] != "." or not text[dot - 1].isupper():
        return False
    return dot == 1 or not text[dot - 2].isalnum()


def sentence_split(text: str) -> List[TextSpan]:
    """
    Split text into sentence spans.

    A sentence ends at '.', '!' or '?' followed by whitespace or end of text,
    except a period after a single uppercase letter. Spans exclude the
    whitespace between sentences; trailing unterminated text is its own span.
    """
    spans: List[TextSpan] = []
    start = _next_non_space(text, 0)
    for match in _TERMINATOR.finditer(text):
        end = match.end()
        if end <= start or _is_initial(text, match.start()):
            continue
        spans.append(TextSpan(start, end))
        start = _next_non_space(text, end)
    if start < len(text):
        end = len(text.rstrip())
        spans.append(TextSpan(start, end))
    return spans


def _make_passage(doc: Document, ordinal: int, pieces: List[List[str]]) -> Passage:
    texts = [" ".join(words) for words in pieces]
    spans = []
    offset = 0
    for piece in texts:
        spans.append(TextSpan(offset, offset + len(piece)))
        offset += len(piece) + 1
    text = " ".join(texts)
    return Passage(
        id=f"{doc.id}:{ordinal}",
        doc_id=doc.id,
        text=text,
        title=doc.title,
        sentence_spans=tuple(spans),
        word_count=sum(len(words) for words in pieces),
    )


def chunk_document(doc: Document, max_words: int = DEFAULT_MAX_WORDS) -> List[Passage]:
    """
    Greedily pack whole sentences into passages of at most max_words words.

    A sentence longer than max_words is cut at word boundaries into
    max_words-sized pieces; the remainder piece may share a passage with
    the sentences that follow it.
    """
    if max_words < 1:
        raise DataError(f"max_words must be >= 1, got {max_words}")
    groups: List[List[List[str]]] = []
    current: List[List[str]] = []
    current_words = 0

    def flush():
        nonlocal current, current_words
        if current:
            groups.append(current)
        current, current_words = [], 0

    for span in sentence_split(doc.text):
        words = span.text(doc.text).split()
        if len(words) > max_words:
            flush()
            full = len(words) - len(words) % max_words
            for offset in range(0, full, max_words):
                groups.append([words[offset:offset + max_words]])
            words = words[full:]
            if not words:
                continue
        if current_words + len(words) > max_words:
            flush()
        current.append(words)
        current_words += len(words)
    flush()
    return [_make_passage(doc, ordinal, pieces) for ordinal, pieces in enumerate(groups)]


def chunk_corpus(documents: Iterable[Document], max_words: int = DEFAULT_MAX_WORDS) -> List[Passage]:
    """Chunk every document, keeping document order."""
    passages: List[Passage] = []
    count = 0
    for document in documents:
        passages.extend(chunk_document(document, max_words))
        count += 1
    logger.info(f"Chunked {count} documents into {len(passages)} passages (max {max_words} words)")
    return passages


def _normalize_once(text: str) -> str:
    text = unicodedata.normalize("NFKC", unicodedata.normalize("NFKC", text).lower())
    text = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text)
    return " ".join(text.split())


def normalize_answer(text: str) -> str:
    """Lowercase, NFKC, punctuation to spaces, collapse whitespace, trim."""
    # iterate to a fixed point; a few exotic code points need a second pass
    for _ in range(4):
        normalized = _normalize_once(text)
        if normalized == text:
            break
        text = normalized
    return text


def _contains_sequence(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    width = len(needle)
    if width == 0 or width > len(haystack):
        return False
    first = needle[0]
    for i in range(len(haystack) - width + 1):
        if haystack[i] == first and list(haystack[i:i + width]) == list(needle):
            return True
    return False


def contains_answer(passage: Union[Passage, str], answers: Sequence[str]) -> bool:
    """
    True iff some answer's normalized tokens occur contiguously in the passage text.

    Only passage text is matched, not the title.
    """
    if not answers:
        raise DataError("contains_answer needs at least one answer")
    text = passage.text if isinstance(passage, Passage) else passage
    tokens = normalize_answer(text).split()
    return any(_contains_sequence(tokens, normalize_answer(answer).split()) for answer in answers)


def read_passages(path: str) -> PassageStore:
    passages = []
    for line_number, record in iter_jsonl(path):
        try:
            passages.append(Passage.from_dict(record))
        except DataError as e:
            raise DataError(f"{path}:{line_number}: {e}") from e
    store = PassageStore(passages)
    logger.info(f"Loaded {len(store)} passages from {path}")
    return store


def write_passages(path: str, passages: Iterable[Passage]) -> int:
    return write_jsonl(path, (passage.to_dict() for passage in passages))


def read_qa(path: str) -> List[QAPair]:
    pairs = []
    for line_number, record in iter_jsonl(path):
        try:
            pairs.append(QAPair.from_dict(record))
        except DataError as e:
            raise DataError(f"{path}:{line_number}: {e}") from e
    logger.info(f"Loaded {len(pairs)} QA pairs from {path}")
    return pairs


def write_qa(path: str, pairs: Iterable[QAPair]) -> int:
    return write_jsonl(path, (pair.to_dict() for pair in pairs))
