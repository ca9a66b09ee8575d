"""
Okapi BM25 inverted index.
Term-matching baseline and the retrieval source for hard-negative mining.
"""

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

from artifacts import atomic_write, dumps_json, read_json
from corpus import Passage
from errors import DataError

logger = logging.getLogger(__name__)

INDEX_FORMAT = "retro-bm25"
INDEX_VERSION = 1

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> List[str]:
    """Lowercase and split on non-alphanumeric characters."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if not (self.k1 >= 0 and math.isfinite(self.k1)):
            raise DataError(f"BM25 k1 must be a finite value >= 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise DataError(f"BM25 b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class ScoredHit:
    passage_id: str
    score: float

    def to_dict(self) -> Dict[str, object]:
        return {"passage_id": self.passage_id, "score": self.score}

    @classmethod
    def from_dict(cls, record: Dict[str, object]) -> "ScoredHit":
        try:
            score = float(record["score"])
            hit = cls(passage_id=str(record["passage_id"]), score=score)
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Malformed hit record: {record!r}") from e
        if not math.isfinite(score):
            raise DataError(f"Hit {hit.passage_id} has a non-finite score")
        return hit


def idf(n_passages: int, df: int) -> float:
    """Lucene-style nonnegative idf: ln(1 + (N - df + 0.5) / (df + 0.5))."""
    return math.log(1.0 + (n_passages - df + 0.5) / (df + 0.5))


class InvertedIndex:
    """Immutable BM25 index; ordinals follow passages sorted by id."""

    def __init__(
        self,
        postings: Dict[str, List[Tuple[int, int]]],
        doc_lengths: List[int],
        passage_ids: List[str],
        params: Bm25Params,
    ):
        if len(doc_lengths) != len(passage_ids):
            raise DataError("doc_lengths and passage_ids differ in length")
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.passage_ids = passage_ids
        self.params = params
        self.avg_doc_length = sum(doc_lengths) / len(doc_lengths) if doc_lengths else 0.0
        self._term_freqs: Dict[str, Dict[int, int]] = {
            token: dict(plist) for token, plist in postings.items()
        }

    def __len__(self) -> int:
        return len(self.passage_ids)

    def document_frequency(self, token: str) -> int:
        return len(self.postings.get(token, ()))

    def _term_weight(self, tf: int, ordinal: int) -> float:
        k1, b = self.params.k1, self.params.b
        norm = k1 * (1.0 - b + b * self.doc_lengths[ordinal] / self.avg_doc_length)
        return tf * (k1 + 1.0) / (tf + norm)

    def score(self, query_tokens: Sequence[str], ordinal: int) -> float:
        """BM25 score of one passage; repeated query tokens count once."""
        if not 0 <= ordinal < len(self.passage_ids):
            raise DataError(f"Ordinal {ordinal} out of range")
        n = len(self.passage_ids)
        total = 0.0
        for token in dict.fromkeys(query_tokens):
            tf = self._term_freqs.get(token, {}).get(ordinal, 0)
            if tf:
                total += idf(n, self.document_frequency(token)) * self._term_weight(tf, ordinal)
        return total

    def search(self, query: str, k: int) -> List[ScoredHit]:
        """
        Top-k passages with score > 0, by score descending then ordinal.

        Scores accumulate term-at-a-time over the posting lists.
        """
        if k < 1:
            raise DataError(f"k must be >= 1, got {k}")
        n = len(self.passage_ids)
        scores: Dict[int, float] = {}
        for token in dict.fromkeys(tokenize(query)):
            plist = self.postings.get(token)
            if not plist:
                continue
            weight = idf(n, len(plist))
            for ordinal, tf in plist:
                scores[ordinal] = scores.get(ordinal, 0.0) + weight * self._term_weight(tf, ordinal)
        ranked = sorted(
            ((ordinal, score) for ordinal, score in scores.items() if score > 0),
            key=lambda item: (-item[1], item[0]),
        )
        return [ScoredHit(self.passage_ids[ordinal], score) for ordinal, score in ranked[:k]]

    def to_dict(self) -> Dict[str, object]:
        return {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "params": {"k1": self.params.k1, "b": self.params.b},
            "passage_ids": self.passage_ids,
            "doc_lengths": self.doc_lengths,
            "postings": {token: [list(p) for p in self.postings[token]] for token in sorted(self.postings)},
        }

    def save(self, path: str) -> None:
        with atomic_write(path) as handle:
            handle.write(dumps_json(self.to_dict()))
            handle.write("\n")
        logger.info(f"Saved BM25 index ({len(self)} passages, {len(self.postings)} terms) to {path}")

    @classmethod
    def load(cls, path: str) -> "InvertedIndex":
        snapshot = read_json(path)
        if not isinstance(snapshot, dict) or snapshot.get("format") != INDEX_FORMAT:
            raise DataError(f"{path}: not a BM25 index snapshot")
        if snapshot.get("version") != INDEX_VERSION:
            raise DataError(f"{path}: unsupported BM25 index version {snapshot.get('version')!r}")
        try:
            params = Bm25Params(**snapshot["params"])
            postings = {
                token: [(int(ordinal), int(tf)) for ordinal, tf in plist]
                for token, plist in snapshot["postings"].items()
            }
            index = cls(postings, [int(n) for n in snapshot["doc_lengths"]], list(snapshot["passage_ids"]), params)
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: corrupt BM25 index: {e}") from e
        logger.info(f"Loaded BM25 index from {path}")
        return index


def build_index(passages: Iterable[Passage], params: Bm25Params = Bm25Params()) -> InvertedIndex:
    """
    Build the inverted index over passage text (titles are not indexed).

    Raises:
        DataError: on duplicate passage ids
    """
    by_id: Dict[str, Passage] = {}
    for passage in passages:
        if passage.id in by_id:
            raise DataError(f"Duplicate passage id: {passage.id}")
        by_id[passage.id] = passage
    passage_ids = sorted(by_id)
    postings: Dict[str, List[Tuple[int, int]]] = {}
    doc_lengths: List[int] = []
    for ordinal, passage_id in enumerate(passage_ids):
        counts = Counter(tokenize(by_id[passage_id].text))
        doc_lengths.append(sum(counts.values()))
        for token in sorted(counts):
            postings.setdefault(token, []).append((ordinal, counts[token]))
    index = InvertedIndex(postings, doc_lengths, passage_ids, params)
    logger.info(
        f"Built BM25 index: {len(index)} passages, {len(postings)} terms, "
        f"avgdl {index.avg_doc_length:.2f} (k1={params.k1}, b={params.b})"
    )
    return index


def bm25_score(index: InvertedIndex, query_tokens: Sequence[str], ordinal: int) -> float:
    return index.score(query_tokens, ordinal)


def search(index: InvertedIndex, query: str, k: int) -> List[ScoredHit]:
    return index.search(query, k)
