"""
Evaluation and analysis.

Top-k retrieval accuracy, the domain-shift diagnostics (vocabulary overlap and
question-token coverage), and the experiment matrix comparing BM25,
finetune-only and pretrain+finetune encoders across synthetic pool sizes.
"""

import csv
import hashlib
import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from artifacts import atomic_write, dumps_json, iter_jsonl, write_jsonl
from config import RunConfig
from corpus import PassageStore, QAPair, contains_answer
from dense_index import DenseIndex, build_dense
from encoder import DualEncoder, init_params
from errors import DataError, InvariantError
from generator import generate_pool
from lexical_index import InvertedIndex, ScoredHit, build_index, tokenize
from seeding import derive_rng
from trainer import SyntheticPool, TrainExample, finetune_examples, train

logger = logging.getLogger(__name__)

RUN_SYSTEMS = ("bm25", "dense", "dpr", "augdpr", "random")
MATRIX_SYSTEMS = ("bm25", "dpr", "augdpr", "random")
STAGE_LABELS = {"bm25": "none", "dpr": "finetune", "augdpr": "pretrain+finetune", "random": "init"}
DEFAULT_TOP_N = 10000
STOPWORDS_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "stopwords.txt")


@dataclass
class RetrievalRun:
    """Ranked hits per question, aligned with the QA file order."""

    system: str
    questions: List[str]
    rankings: List[List[ScoredHit]]
    depth: int

    def __post_init__(self):
        if self.system not in RUN_SYSTEMS:
            raise DataError(f"Unknown retrieval system: {self.system}")
        if len(self.questions) != len(self.rankings):
            raise DataError("Run has a different number of questions and rankings")
        if self.depth < 1:
            raise DataError(f"Run depth must be >= 1, got {self.depth}")

    def __len__(self) -> int:
        return len(self.questions)

    def to_jsonl(self, path: str) -> int:
        return write_jsonl(path, (
            {
                "qid": qid,
                "system": self.system,
                "depth": self.depth,
                "question": question,
                "hits": [hit.to_dict() for hit in hits],
            }
            for qid, (question, hits) in enumerate(zip(self.questions, self.rankings))
        ))

    @classmethod
    def from_jsonl(cls, path: str) -> "RetrievalRun":
        system, depth = None, None
        questions: List[str] = []
        rankings: List[List[ScoredHit]] = []
        for line_number, record in iter_jsonl(path):
            try:
                qid = int(record["qid"])
                row_system, row_depth = str(record["system"]), int(record["depth"])
                hits = [ScoredHit.from_dict(hit) for hit in record["hits"]]
                question = str(record["question"])
            except (KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{line_number}: malformed run row: {e}") from e
            if qid != len(questions):
                raise DataError(f"{path}:{line_number}: expected qid {len(questions)}, found {qid}")
            if system is None:
                system, depth = row_system, row_depth
            elif (row_system, row_depth) != (system, depth):
                raise DataError(f"{path}:{line_number}: mixed systems or depths in one run")
            questions.append(question)
            rankings.append(hits)
        if system is None:
            raise DataError(f"{path}: run file is empty")
        return cls(system, questions, rankings, depth)


@dataclass(frozen=True)
class AccuracyReport:
    accuracy: Dict[int, float]
    question_count: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "question_count": self.question_count,
            "accuracy": {str(k): self.accuracy[k] for k in sorted(self.accuracy)},
        }


def read_run(path: str) -> RetrievalRun:
    return RetrievalRun.from_jsonl(path)


def write_run(path: str, run: RetrievalRun) -> int:
    return run.to_jsonl(path)


def topk_accuracy(run: RetrievalRun, qa: Sequence[QAPair], ks: Sequence[int], passages: PassageStore) -> AccuracyReport:
    """
    Fraction of questions with an answer-bearing passage among the first k hits.

    Raises:
        DataError: if the run does not cover every question, a k exceeds the run
            depth, or a hit names an unknown passage
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise DataError(f"ks must be a nonempty list of integers >= 1, got {ks}")
    if ks[-1] > run.depth:
        raise DataError(f"k={ks[-1]} exceeds the run depth {run.depth}")
    if not qa:
        raise DataError("Cannot evaluate an empty QA set")
    if len(run) != len(qa):
        raise DataError(f"Run covers {len(run)} questions but the QA file has {len(qa)}")
    first_hit: List[Optional[int]] = []
    for position, (pair, hits) in enumerate(zip(qa, run.rankings)):
        if run.questions[position] != pair.question:
            raise DataError(f"Run question {position} does not match the QA file: {run.questions[position]!r}")
        rank = None
        for i, hit in enumerate(hits[:ks[-1]], start=1):
            if contains_answer(passages.get(hit.passage_id), pair.answers):
                rank = i
                break
        first_hit.append(rank)
    accuracy = {k: sum(1 for rank in first_hit if rank is not None and rank <= k) / len(qa) for k in ks}
    values = [accuracy[k] for k in ks]
    if any(a > b for a, b in zip(values, values[1:])):
        raise InvariantError(f"Accuracy decreased with k: {accuracy}")
    return AccuracyReport(accuracy, len(qa))


def load_stopwords(path: Optional[str] = None) -> FrozenSet[str]:
    """The vendored stop-word list; '#' lines are comments."""
    words = set()
    with open(path or STOPWORDS_FILE, encoding="utf-8") as handle:
        for line in handle:
            word = line.strip()
            if word and not word.startswith("#"):
                words.add(word.lower())
    return frozenset(words)


def corpus_tokens(passages: Iterable) -> List[str]:
    return [token for passage in passages for token in tokenize(passage.text)]


def top_vocabulary(tokens: Iterable[str], top_n: int, stopwords: FrozenSet[str] = frozenset()) -> List[str]:
    """Most frequent non-stopword tokens; frequency ties break lexicographically."""
    counts = Counter(token for token in tokens if token not in stopwords)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return [token for token, _ in ranked[:top_n]]


def vocab_overlap(
    corpus_a: Iterable[str],
    corpus_b: Iterable[str],
    top_n: int = DEFAULT_TOP_N,
    stopwords: FrozenSet[str] = frozenset(),
) -> float:
    """|V_a ∩ V_b| / min(|V_a|, |V_b|) over each side's top_n vocabulary."""
    if top_n < 1:
        raise DataError(f"top_n must be >= 1, got {top_n}")
    vocab_a = set(top_vocabulary(corpus_a, top_n, stopwords))
    vocab_b = set(top_vocabulary(corpus_b, top_n, stopwords))
    if not vocab_a or not vocab_b:
        raise DataError("vocab_overlap needs two corpora with tokens left after stop-word removal")
    return len(vocab_a & vocab_b) / min(len(vocab_a), len(vocab_b))


def question_token_coverage(qa: Sequence[QAPair], passages: PassageStore, stopwords: FrozenSet[str] = frozenset()) -> float:
    """
    Mean fraction of each question's distinct non-stopword tokens found in its gold passage.

    Questions made only of stop words are skipped.
    """
    fractions = []
    for position, pair in enumerate(qa):
        if pair.gold_passage_id is None:
            raise DataError(f"QA pair {position} ({pair.question!r}) has no gold_passage_id")
        gold_tokens = set(tokenize(passages.get(pair.gold_passage_id).text))
        question_tokens = {token for token in tokenize(pair.question) if token not in stopwords}
        if not question_tokens:
            logger.debug(f"Question {position} has only stop words; skipped")
            continue
        fractions.append(len(question_tokens & gold_tokens) / len(question_tokens))
    if not fractions:
        raise DataError("No question has a non-stopword token")
    if len(fractions) < len(qa):
        logger.warning(f"Coverage skipped {len(qa) - len(fractions)} stop-word-only questions")
    return sum(fractions) / len(fractions)


def read_questions(path: str) -> List[str]:
    """Question texts of a JSONL file; only the "question" field is read."""
    questions = []
    for line_number, record in iter_jsonl(path):
        question = record.get("question")
        if not isinstance(question, str) or not question.strip():
            raise DataError(f"{path}:{line_number}: record needs a nonempty 'question' string")
        questions.append(question)
    return questions


def _texts(items: Sequence[Union[str, QAPair]]) -> List[str]:
    return [item if isinstance(item, str) else item.question for item in items]


def bm25_run(index: InvertedIndex, qa: Sequence[Union[str, QAPair]], depth: int) -> RetrievalRun:
    questions = _texts(qa)
    return RetrievalRun(
        system="bm25",
        questions=questions,
        rankings=[index.search(question, depth) for question in questions],
        depth=depth,
    )


def dense_run(
    encoder: DualEncoder, index: DenseIndex, qa: Sequence[Union[str, QAPair]], depth: int, system: str = "dense"
) -> RetrievalRun:
    questions = _texts(qa)
    q_vecs = encoder.encode_questions(questions) if questions else []
    return RetrievalRun(
        system=system,
        questions=questions,
        rankings=[index.search(q_vec, depth) for q_vec in q_vecs],
        depth=depth,
    )


@dataclass(frozen=True)
class MatrixRow:
    system: str
    stage: str
    size: int
    seed: Optional[int]
    domain: str
    accuracy: Dict[int, float]
    question_count: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "system": self.system,
            "stage": self.stage,
            "size": self.size,
            "seed": self.seed,
            "domain": self.domain,
            "question_count": self.question_count,
            "accuracy": {str(k): self.accuracy[k] for k in sorted(self.accuracy)},
        }

    @classmethod
    def from_dict(cls, record: Dict[str, object]) -> "MatrixRow":
        return cls(
            system=str(record["system"]),
            stage=str(record["stage"]),
            size=int(record["size"]),
            seed=None if record.get("seed") is None else int(record["seed"]),
            domain=str(record.get("domain", "in")),
            accuracy={int(k): float(v) for k, v in dict(record["accuracy"]).items()},
            question_count=int(record["question_count"]),
        )


@dataclass
class EvalDomain:
    """Passages and held-out questions one system is scored on."""

    name: str
    passages: PassageStore
    qa: List[QAPair]
    index: Optional[InvertedIndex] = None

    def bm25(self, run_config: RunConfig) -> InvertedIndex:
        if self.index is None:
            self.index = build_index(self.passages, run_config.bm25)
        return self.index


@dataclass
class MatrixInputs:
    passages: PassageStore
    train_qa: List[QAPair]
    test_qa: List[QAPair]
    ood_passages: Optional[PassageStore] = None
    ood_test_qa: Optional[List[QAPair]] = None

    def domains(self) -> List[EvalDomain]:
        domains = [EvalDomain("in", self.passages, list(self.test_qa))]
        if self.ood_passages is not None and self.ood_test_qa is not None:
            domains.append(EvalDomain("ood", self.ood_passages, list(self.ood_test_qa)))
        return domains

    def digest(self) -> str:
        sha = hashlib.sha256()
        for passage in self.passages:
            sha.update(dumps_json(passage.to_dict()).encode("utf-8"))
        for label, pairs in (("train", self.train_qa), ("test", self.test_qa), ("ood", self.ood_test_qa or [])):
            sha.update(label.encode("utf-8"))
            for pair in pairs:
                sha.update(dumps_json(pair.to_dict()).encode("utf-8"))
        for passage in self.ood_passages or []:
            sha.update(dumps_json(passage.to_dict()).encode("utf-8"))
        return sha.hexdigest()


def pretrain_epochs(size: int, batch_size: int, base_epochs: int, fixed_updates: Optional[int]) -> int:
    """Epoch count for a pool of `size` passages; with fixed_updates the update budget is held constant."""
    if fixed_updates is None:
        return base_epochs
    if fixed_updates < 1:
        raise DataError(f"fixed_updates must be >= 1, got {fixed_updates}")
    return max(1, math.ceil(fixed_updates / math.ceil(size / batch_size)))


def matrix_fingerprint(inputs: MatrixInputs, run_config: RunConfig, fixed_updates: Optional[int] = None) -> str:
    record = {"config": run_config.fingerprint(), "data": inputs.digest(), "fixed_updates": fixed_updates}
    return hashlib.sha256(dumps_json(record).encode("utf-8")).hexdigest()


def _evaluate(
    model: Optional[DualEncoder], domains: Sequence[EvalDomain], run_config: RunConfig
) -> Dict[str, AccuracyReport]:
    ks, depth = run_config.eval.ks, run_config.eval.depth
    reports = {}
    for domain in domains:
        if model is None:
            run = bm25_run(domain.bm25(run_config), domain.qa, depth)
        else:
            run = dense_run(model, build_dense(model, domain.passages), domain.qa, depth)
        reports[domain.name] = topk_accuracy(run, domain.qa, ks, domain.passages)
    return reports


def _rows(system: str, size: int, seed: int, reports: Dict[str, AccuracyReport]) -> List[MatrixRow]:
    return [
        MatrixRow(system, STAGE_LABELS[system], size, seed, name, report.accuracy, report.question_count)
        for name, report in reports.items()
    ]


@dataclass
class _SeedTask:
    seed: int
    sizes: List[int]
    inputs: MatrixInputs
    run_config: RunConfig
    bm25_reports: Dict[str, AccuracyReport]
    fixed_updates: Optional[int]
    with_random: bool


def _synthetic_order(inputs: MatrixInputs, index: InvertedIndex, run_config: RunConfig, seed: int) -> Tuple[SyntheticPool, List[str]]:
    gen = run_config.generator
    examples = generate_pool(
        inputs.passages, index, gen.n_questions, gen.sampler(seed), gen.negative_depth, gen.weights
    )
    pool = SyntheticPool.from_examples(examples)
    ids = pool.passage_ids()
    order = [ids[i] for i in derive_rng(seed, "pool-order").permutation(len(ids))]
    return pool, order


def _run_seed(task: _SeedTask) -> List[MatrixRow]:
    """Every cell of one seed: finetune-only once, then one pretrain+finetune per size."""
    run_config, inputs, seed = task.run_config, task.inputs, task.seed
    domains = inputs.domains()
    index = domains[0].bm25(run_config)
    init = init_params(replace(run_config.trainer.encoder, seed=seed))
    pretrain_config = replace(run_config.trainer.pretrain, seed=seed)
    finetune_config = replace(run_config.trainer.finetune, seed=seed)

    gold: List[TrainExample] = finetune_examples(
        inputs.train_qa, inputs.passages, index, run_config.generator.negative_depth, seed
    )
    logger.info(f"[seed {seed}] finetune-only baseline")
    dpr_reports = _evaluate(train(init, gold, inputs.passages, finetune_config), domains, run_config)
    random_reports = _evaluate(init, domains, run_config) if task.with_random else None

    pool, order = None, []
    if any(size > 0 for size in task.sizes):
        pool, order = _synthetic_order(inputs, index, run_config, seed)

    rows: List[MatrixRow] = []
    for size in task.sizes:
        rows.extend(_rows("bm25", size, seed, task.bm25_reports))
        rows.extend(_rows("dpr", size, seed, dpr_reports))
        if size > 0:
            if size > len(order):
                raise DataError(f"Pool size {size} exceeds the {len(order)} passages with synthetic questions")
            epochs = pretrain_epochs(size, pretrain_config.batch_size, pretrain_config.epochs, task.fixed_updates)
            logger.info(f"[seed {seed}] pretraining on {size} synthetic passages for {epochs} epochs")
            pretrained = train(init, pool.restrict(order[:size]), inputs.passages, replace(pretrain_config, epochs=epochs))
            augmented = train(pretrained, gold, inputs.passages, finetune_config)
            rows.extend(_rows("augdpr", size, seed, _evaluate(augmented, domains, run_config)))
        if random_reports is not None:
            rows.extend(_rows("random", size, seed, random_reports))
    return rows


def _expected_keys(sizes: Sequence[int], domains: Sequence[str], with_random: bool) -> List[Tuple[str, int, str]]:
    keys = []
    for size in sizes:
        systems = [s for s in MATRIX_SYSTEMS if (s != "augdpr" or size > 0) and (s != "random" or with_random)]
        keys.extend((system, size, domain) for system in systems for domain in domains)
    return keys


def run_matrix(
    inputs: MatrixInputs,
    sizes: Sequence[int],
    seeds: Sequence[int],
    run_config: RunConfig = RunConfig(),
    jobs: int = 1,
    fixed_updates: Optional[int] = None,
    with_random: bool = False,
    store=None,
    resume: bool = False,
) -> List[MatrixRow]:
    """
    Evaluate BM25, finetune-only and pretrain+finetune for every (size, seed).

    Size 0 has no pretrained system. Rows come out ordered by size, then seed,
    then system, then domain. Each distinct seed is computed once; repeated
    seeds repeat its rows. With a results store, finished cells are saved and,
    when resume is set, reused if their fingerprint matches.
    """
    sizes, seeds = [int(s) for s in sizes], [int(s) for s in seeds]
    if not sizes or not seeds:
        raise DataError("run_matrix needs at least one size and one seed")
    if any(s < 0 for s in sizes) or sizes != sorted(sizes):
        raise DataError(f"sizes must be nonnegative and ascending, got {sizes}")
    if not inputs.train_qa or not inputs.test_qa:
        raise DataError("run_matrix needs gold train and test QA pairs")
    if jobs < 1:
        raise DataError(f"jobs must be >= 1, got {jobs}")

    domains = inputs.domains()
    domain_names = [domain.name for domain in domains]
    fingerprint = matrix_fingerprint(inputs, run_config, fixed_updates)
    bm25_reports = _evaluate(None, domains, run_config)

    by_seed: Dict[int, List[MatrixRow]] = {}
    pending: List[int] = []
    for seed in dict.fromkeys(seeds):
        cached = _cached_rows(store, fingerprint, seed, sizes, domain_names, with_random) if resume else None
        if cached is not None:
            logger.info(f"[seed {seed}] reusing {len(cached)} stored cells")
            by_seed[seed] = cached
        else:
            pending.append(seed)

    tasks = [
        _SeedTask(seed, sizes, inputs, run_config, bm25_reports, fixed_updates, with_random) for seed in pending
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as executor:
            results = list(executor.map(_run_seed, tasks))
    else:
        results = [_run_seed(task) for task in tasks]
    for seed, rows in zip(pending, results):
        by_seed[seed] = rows
        if store is not None:
            for row in rows:
                store.save_cell({**row.to_dict(), "fingerprint": fingerprint})

    ordered: List[MatrixRow] = []
    for size in sizes:
        for seed in seeds:
            ordered.extend(row for row in by_seed[seed] if row.size == size)
    logger.info(f"Matrix complete: {len(ordered)} reports over sizes {sizes} and seeds {seeds}")
    return ordered


def _cached_rows(store, fingerprint: str, seed: int, sizes, domains, with_random: bool) -> Optional[List[MatrixRow]]:
    if store is None:
        return None
    rows = []
    for system, size, domain in _expected_keys(sizes, domains, with_random):
        cell = store.get_cell(system, size, seed, fingerprint, domain)
        if cell is None:
            return None
        rows.append(MatrixRow.from_dict(cell.to_dict()))
    return rows


def summarize_rows(rows: Sequence[MatrixRow]) -> List[MatrixRow]:
    """Mean accuracy over seeds per (system, size, domain), in first-seen order."""
    groups: Dict[Tuple[str, int, str], List[MatrixRow]] = {}
    for row in rows:
        groups.setdefault((row.system, row.size, row.domain), []).append(row)
    summary = []
    for (system, size, domain), members in groups.items():
        ks = sorted(members[0].accuracy)
        mean = {k: sum(member.accuracy[k] for member in members) / len(members) for k in ks}
        summary.append(MatrixRow(system, members[0].stage, size, None, domain, mean, members[0].question_count))
    return summary


def render_table(rows: Sequence[MatrixRow], ks: Optional[Sequence[int]] = None) -> str:
    """Aligned text table: one line per row, Top-k accuracies as percentages."""
    if ks is None:
        ks = sorted({k for row in rows for k in row.accuracy})
    header = ["System", "Stage", "Size", "Seed", "Domain"] + [f"Top-{k}" for k in ks]
    body = [
        [row.system, row.stage, str(row.size), "mean" if row.seed is None else str(row.seed), row.domain]
        + [f"{100 * row.accuracy[k]:.1f}" if k in row.accuracy else "-" for k in ks]
        for row in rows
    ]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip() for line in [header] + body]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def write_csv(path: str, rows: Sequence[MatrixRow], ks: Optional[Sequence[int]] = None) -> None:
    if ks is None:
        ks = sorted({k for row in rows for k in row.accuracy})
    with atomic_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["system", "stage", "size", "seed", "domain", "question_count"] + [f"top{k}" for k in ks])
        for row in rows:
            writer.writerow(
                [row.system, row.stage, row.size, "" if row.seed is None else row.seed, row.domain, row.question_count]
                + [row.accuracy.get(k, "") for k in ks]
            )
    logger.info(f"Wrote {len(rows)} rows to {path}")
