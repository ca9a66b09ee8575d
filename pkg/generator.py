"""
Synthetic QA example generation.

For a passage: pick an answer candidate a (and with it its sentence s) by
top-p top-k sampling over heuristic candidate weights, turn (s, a) into a
question q with a wh-fronting template, then mine a BM25 hard negative that
does not contain a.
"""

import logging
import re
import unicodedata
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from artifacts import iter_jsonl, write_jsonl
from corpus import Passage, PassageStore, TextSpan, contains_answer
from errors import DataError
from lexical_index import InvertedIndex
from seeding import derive_rng

logger = logging.getLogger(__name__)

ANSWER_KINDS = ("number", "date_like", "capitalized_span", "quoted_span")
DEFAULT_QUESTIONS_PER_PASSAGE = 4
DEFAULT_NEGATIVE_DEPTH = 50
MAX_CAPITALIZED_RUN = 5
_MASS_TOLERANCE = 1e-12

WH_PHRASES = {
    "date_like": "when does",
    "number": "how many",
    "capitalized_span": "who or what",
    "quoted_span": "what is",
}

_NUMBER = re.compile(r"(?<![\w.,])\d+(?:[.,]\d+)*s?(?![\w])")
_YEAR = re.compile(r"(?:1[0-9]|20)\d{2}s?")
_WORD = re.compile(r"\S+")
_QUOTED = re.compile(r"\"([^\"]+)\"|“([^”]+)”")
_TERMINAL = ".!?"


@dataclass(frozen=True)
class SamplerConfig:
    top_p: float = 0.95
    top_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.top_p <= 1:
            raise DataError(f"top_p must be in (0, 1], got {self.top_p}")
        if not isinstance(self.top_k, int) or self.top_k < 1:
            raise DataError(f"top_k must be an integer >= 1, got {self.top_k!r}")


@dataclass(frozen=True)
class CandidateWeights:
    number: float = 2.0
    date_like: float = 2.0
    capitalized_span: float = 1.5
    quoted_span: float = 1.0

    def __post_init__(self):
        for kind in ANSWER_KINDS:
            if not getattr(self, kind) > 0:
                raise DataError(f"Candidate weight for {kind} must be > 0")

    def for_kind(self, kind: str) -> float:
        return getattr(self, kind)


@dataclass(frozen=True)
class CandidateAnswer:
    sentence_index: int
    span: TextSpan
    surface: str
    kind: str
    weight: float


@dataclass(frozen=True)
class SyntheticExample:
    passage_id: str
    sentence: TextSpan
    answer: CandidateAnswer
    question: str
    negative_passage_id: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "passage_id": self.passage_id,
            "sentence": self.sentence.to_list(),
            "answer": {
                "text": self.answer.surface,
                "span": self.answer.span.to_list(),
                "kind": self.answer.kind,
                "sentence_index": self.answer.sentence_index,
                "weight": self.answer.weight,
            },
            "question": self.question,
            "negative_passage_id": self.negative_passage_id,
        }

    @classmethod
    def from_dict(cls, record: Dict[str, object]) -> "SyntheticExample":
        try:
            answer = record["answer"]
            example = cls(
                passage_id=str(record["passage_id"]),
                sentence=TextSpan.from_list(record["sentence"]),
                answer=CandidateAnswer(
                    sentence_index=int(answer.get("sentence_index", 0)),
                    span=TextSpan.from_list(answer["span"]),
                    surface=str(answer["text"]),
                    kind=str(answer.get("kind", "capitalized_span")),
                    weight=float(answer.get("weight", 1.0)),
                ),
                question=str(record["question"]),
                negative_passage_id=record.get("negative_passage_id"),
            )
        except (KeyError, TypeError, AttributeError) as e:
            raise DataError(f"Malformed synthetic example: {e}") from e
        if not example.question.strip():
            raise DataError(f"Synthetic example for {example.passage_id} has an empty question")
        return example


def truncated_distribution(weights: Sequence[float], config: SamplerConfig) -> np.ndarray:
    """
    Top-k then top-p truncation of normalized weights, renormalized.

    Returns a probability vector over all input indices (zeros outside the kept set).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DataError("Sampling weights must be finite and nonnegative")
    total = w.sum()
    if not total > 0:
        raise DataError("At least one sampling weight must be positive")
    probs = w / total
    order = np.argsort(-probs, kind="stable")[:config.top_k]
    cumulative = np.cumsum(probs[order])
    # smallest prefix whose mass reaches top_p, tolerant of cumsum rounding
    cutoff = int(np.searchsorted(cumulative, config.top_p - _MASS_TOLERANCE, side="left")) + 1
    kept = order[:cutoff]
    kept = kept[probs[kept] > 0]
    truncated = np.zeros_like(probs)
    truncated[kept] = probs[kept] / probs[kept].sum()
    return truncated


def sample_truncated(weights: Sequence[float], config: SamplerConfig, rng: np.random.Generator) -> int:
    """Draw one index from the top-p top-k truncated distribution."""
    dist = truncated_distribution(weights, config)
    support = np.flatnonzero(dist)
    cumulative = np.cumsum(dist[support])
    position = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return int(support[min(position, len(support) - 1)])


def _strip_punctuation(word: str, offset: int) -> Tuple[str, int, bool]:
    """Trim punctuation from both ends; returns (core, core_offset, had_trailing_punctuation)."""
    start, end = 0, len(word)
    while start < end and unicodedata.category(word[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(word[end - 1]).startswith("P"):
        end -= 1
    return word[start:end], offset + start, end < len(word)


def _sentence_candidates(passage: Passage, index: int, weights: CandidateWeights) -> List[CandidateAnswer]:
    span = passage.sentence_spans[index]
    sentence = span.text(passage.text)
    found: List[CandidateAnswer] = []

    def emit(start: int, end: int, kind: str):
        absolute = TextSpan(span.start + start, span.start + end)
        found.append(CandidateAnswer(index, absolute, absolute.text(passage.text), kind, weights.for_kind(kind)))

    for match in _NUMBER.finditer(sentence):
        kind = "date_like" if _YEAR.fullmatch(match.group()) else "number"
        emit(match.start(), match.end(), kind)

    run: List[Tuple[int, int]] = []

    def close_run():
        if 0 < len(run) <= MAX_CAPITALIZED_RUN:
            emit(run[0][0], run[-1][1], "capitalized_span")
        run.clear()

    for position, match in enumerate(_WORD.finditer(sentence)):
        core, core_start, trailing = _strip_punctuation(match.group(), match.start())
        capitalized = position > 0 and bool(core) and core[0].isupper()
        if capitalized:
            run.append((core_start, core_start + len(core)))
        else:
            close_run()
        if trailing:
            close_run()
    close_run()

    for match in _QUOTED.finditer(sentence):
        group = 1 if match.group(1) is not None else 2
        inner_start, inner_end = match.start(group), match.end(group)
        inner = sentence[inner_start:inner_end]
        lead = len(inner) - len(inner.lstrip())
        trail = len(inner.rstrip())
        if trail > lead:
            emit(inner_start + lead, inner_start + trail, "quoted_span")
    return found


def extract_answer_candidates(passage: Passage, weights: CandidateWeights = CandidateWeights()) -> List[CandidateAnswer]:
    """
    Heuristic answer candidates per sentence: numbers and years, capitalized
    non-initial runs of up to five words, and quoted spans.

    Deduplicated by span (first rule wins) and ordered by span position.
    """
    by_span: Dict[Tuple[int, int], CandidateAnswer] = {}
    for index in range(len(passage.sentence_spans)):
        for candidate in _sentence_candidates(passage, index, weights):
            by_span.setdefault((candidate.span.start, candidate.span.end), candidate)
    return [by_span[key] for key in sorted(by_span)]


def generate_question(passage: Passage, answer: CandidateAnswer) -> str:
    """
    Wh-fronted cloze: the wh-phrase for the answer kind, then the answer
    sentence without the answer span and terminal punctuation, then '?'.
    """
    sentence_span = passage.sentence_spans[answer.sentence_index]
    if not sentence_span.contains(answer.span):
        raise DataError(f"Answer span {answer.span} lies outside sentence {answer.sentence_index}")
    before = passage.text[sentence_span.start:answer.span.start]
    after = passage.text[answer.span.end:sentence_span.end]
    rest = " ".join(f"{before} {after}".split()).rstrip(_TERMINAL + " ").lower()
    if not any(ch.isalnum() for ch in rest):
        rest = ""
    wh_phrase = WH_PHRASES[answer.kind]
    return f"{wh_phrase} {rest}?" if rest else f"{wh_phrase}?"


def generate_examples(
    passage: Passage,
    n_questions: int = DEFAULT_QUESTIONS_PER_PASSAGE,
    sampler: SamplerConfig = SamplerConfig(),
    rng: Optional[np.random.Generator] = None,
    weights: CandidateWeights = CandidateWeights(),
) -> List[SyntheticExample]:
    """
    Sample n_questions candidates and build their questions; duplicates collapse.

    Without an explicit rng the stream is derived from (sampler.seed, passage.id).
    """
    if n_questions < 1:
        raise DataError(f"n_questions must be >= 1, got {n_questions}")
    candidates = extract_answer_candidates(passage, weights)
    if not candidates:
        return []
    if rng is None:
        rng = derive_rng(sampler.seed, "generate", passage.id)
    candidate_weights = [candidate.weight for candidate in candidates]
    examples: Dict[Tuple[int, int, str], SyntheticExample] = {}
    for _ in range(n_questions):
        candidate = candidates[sample_truncated(candidate_weights, sampler, rng)]
        question = generate_question(passage, candidate)
        key = (candidate.span.start, candidate.span.end, question)
        if key not in examples:
            examples[key] = SyntheticExample(
                passage_id=passage.id,
                sentence=passage.sentence_spans[candidate.sentence_index],
                answer=candidate,
                question=question,
            )
    return list(examples.values())


def sample_negative(
    index: InvertedIndex,
    question: str,
    answers: Sequence[str],
    source_passage_id: str,
    passages: PassageStore,
    rng: np.random.Generator,
    depth: int = DEFAULT_NEGATIVE_DEPTH,
) -> Optional[str]:
    """Uniformly pick a BM25 hit that is not the source and contains none of the answers."""
    pool = [
        hit.passage_id
        for hit in index.search(question, depth)
        if hit.passage_id != source_passage_id and not contains_answer(passages.get(hit.passage_id), answers)
    ]
    if not pool:
        return None
    return pool[int(rng.integers(len(pool)))]


def mine_negative(
    index: InvertedIndex,
    example: SyntheticExample,
    passages: PassageStore,
    depth: int = DEFAULT_NEGATIVE_DEPTH,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
) -> Optional[str]:
    """Hard negative for a synthetic example, or None if no BM25 hit qualifies."""
    if rng is None:
        rng = derive_rng(seed, "mine", example.passage_id, example.question)
    return sample_negative(index, example.question, [example.answer.surface], example.passage_id, passages, rng, depth)


def generate_pool(
    passages: PassageStore,
    index: Optional[InvertedIndex],
    n_questions: int = DEFAULT_QUESTIONS_PER_PASSAGE,
    sampler: SamplerConfig = SamplerConfig(),
    depth: int = DEFAULT_NEGATIVE_DEPTH,
    weights: CandidateWeights = CandidateWeights(),
) -> List[SyntheticExample]:
    """
    Generate examples for every passage and attach mined negatives.

    Each passage uses its own stream derived from (seed, passage id), shared by
    candidate sampling and negative mining, so output is independent of
    processing order.
    """
    examples: List[SyntheticExample] = []
    empty = 0
    unmined = 0
    for passage in passages:
        rng = derive_rng(sampler.seed, "passage", passage.id)
        generated = generate_examples(passage, n_questions, sampler, rng, weights)
        if not generated:
            empty += 1
            logger.debug(f"No answer candidates in passage {passage.id}")
        for example in generated:
            if index is not None:
                negative = mine_negative(index, example, passages, depth, rng)
                if negative is None:
                    unmined += 1
                example = replace(example, negative_passage_id=negative)
            examples.append(example)
    if empty:
        logger.warning(f"{empty} passages produced no answer candidates")
    if unmined:
        logger.warning(f"{unmined} synthetic questions have no minable negative (in-batch negatives only)")
    logger.info(f"Generated {len(examples)} synthetic examples from {len(passages)} passages")
    return examples


def read_synthetic(path: str) -> List[SyntheticExample]:
    examples = []
    for line_number, record in iter_jsonl(path):
        try:
            examples.append(SyntheticExample.from_dict(record))
        except DataError as e:
            raise DataError(f"{path}:{line_number}: {e}") from e
    logger.info(f"Loaded {len(examples)} synthetic examples from {path}")
    return examples


def write_synthetic(path: str, examples: Iterable[SyntheticExample]) -> int:
    return write_jsonl(path, (example.to_dict() for example in examples))
