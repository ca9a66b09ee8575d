"""
Contrastive training of the dual encoder.

In-batch negative softmax loss with shared hard negatives, Adam updates with
optional gradient accumulation, per-epoch resampling of synthetic questions,
and the pretrain -> finetune schedule.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from artifacts import write_jsonl
from corpus import PassageStore, QAPair
from encoder import DualEncoder, EncoderParams, TENSOR_NAMES, backward, encode_batch, token_buckets
from errors import DataError, InvariantError
from generator import DEFAULT_NEGATIVE_DEPTH, SyntheticExample, sample_negative
from lexical_index import InvertedIndex
from seeding import derive_rng

logger = logging.getLogger(__name__)

STAGES = ("pretrain", "finetune")
DESK_EPOCHS = {"pretrain": 6, "finetune": 20}
# p.b2 has an exactly zero gradient (it shifts every score of a row equally)
GRAD_CHECK_FLOOR = 1e-5


@dataclass(frozen=True)
class TrainExample:
    question: str
    positive_passage_id: str
    hard_negative_passage_id: Optional[str] = None

    def __post_init__(self):
        if self.hard_negative_passage_id is not None and self.hard_negative_passage_id == self.positive_passage_id:
            raise DataError(f"Hard negative equals positive passage {self.positive_passage_id}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 6
    learning_rate: float = 1e-3
    seed: int = 0
    stage: str = "pretrain"
    grad_accum_steps: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.stage not in STAGES:
            raise DataError(f"Unknown training stage: {self.stage}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise DataError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise DataError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.grad_accum_steps < 1:
            raise DataError(f"grad_accum_steps must be >= 1, got {self.grad_accum_steps}")

    @classmethod
    def for_stage(cls, stage: str, **overrides) -> "TrainConfig":
        """Desk defaults for a stage: 6 pretraining or 20 finetuning epochs."""
        values = {"stage": stage, "epochs": DESK_EPOCHS[stage]}
        values.update(overrides)
        return cls(**values)


class SyntheticPool:
    """Synthetic examples grouped by source passage."""

    def __init__(self, groups: Dict[str, List[SyntheticExample]]):
        for passage_id, examples in groups.items():
            if not examples:
                raise DataError(f"Synthetic pool entry {passage_id} has no examples")
        self.groups = {passage_id: list(groups[passage_id]) for passage_id in sorted(groups)}

    @classmethod
    def from_examples(cls, examples: Iterable[SyntheticExample]) -> "SyntheticPool":
        groups: Dict[str, List[SyntheticExample]] = defaultdict(list)
        for example in examples:
            groups[example.passage_id].append(example)
        return cls(groups)

    def __len__(self) -> int:
        return len(self.groups)

    def passage_ids(self) -> List[str]:
        return list(self.groups)

    def example_count(self) -> int:
        return sum(len(examples) for examples in self.groups.values())

    def restrict(self, passage_ids: Iterable[str]) -> "SyntheticPool":
        keep = set(passage_ids)
        return SyntheticPool({pid: examples for pid, examples in self.groups.items() if pid in keep})

    def referenced_ids(self) -> List[str]:
        ids = []
        for passage_id, examples in self.groups.items():
            ids.append(passage_id)
            ids.extend(e.negative_passage_id for e in examples if e.negative_passage_id)
        return ids


@dataclass(frozen=True)
class EpochRecord:
    stage: str
    epoch: int
    mean_loss: float
    examples: int

    def to_dict(self) -> Dict[str, object]:
        return {"stage": self.stage, "epoch": self.epoch, "mean_loss": self.mean_loss, "examples": self.examples}


def resample_epoch(pool: SyntheticPool, epoch: int, seed: int) -> List[TrainExample]:
    """
    One uniformly chosen synthetic question per passage for this epoch.

    Passages are visited in sorted id order, then the result is shuffled by the
    same (seed, epoch) stream.
    """
    if not len(pool):
        raise DataError("Synthetic pool is empty")
    rng = derive_rng(seed, "resample", epoch)
    chosen = []
    for passage_id, examples in pool.groups.items():
        example = examples[int(rng.integers(len(examples)))]
        chosen.append(TrainExample(example.question, passage_id, example.negative_passage_id))
    return [chosen[i] for i in rng.permutation(len(chosen))]


def in_batch_loss(
    q_vecs: np.ndarray,
    pos_vecs: np.ndarray,
    neg_vecs: Optional[np.ndarray] = None,
    neg_owner: Optional[Sequence[int]] = None,
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """
    Mean softmax NLL of each question's positive among all B positives and H
    hard negatives of the batch.

    Args:
        q_vecs: [B × d] question vectors
        pos_vecs: [B × d] positive passage vectors, row i pairs with question i
        neg_vecs: [H × d] hard negatives, shared by every question
        neg_owner: for each negative row, the index of the question it was mined for

    Returns:
        (loss, dL/dq_vecs, dL/dpos_vecs, dL/dneg_vecs)
    """
    q_vecs = np.asarray(q_vecs, dtype=np.float64)
    pos_vecs = np.asarray(pos_vecs, dtype=np.float64)
    batch = q_vecs.shape[0]
    if neg_vecs is None:
        neg_vecs = np.zeros((0, q_vecs.shape[1]))
    neg_vecs = np.asarray(neg_vecs, dtype=np.float64)
    if batch < 1 or pos_vecs.shape != q_vecs.shape or neg_vecs.shape[1:] != q_vecs.shape[1:]:
        raise DataError(f"Inconsistent loss inputs: q {q_vecs.shape}, pos {pos_vecs.shape}, neg {neg_vecs.shape}")
    if neg_owner is not None:
        if len(neg_owner) != neg_vecs.shape[0] or any(not 0 <= owner < batch for owner in neg_owner):
            raise DataError("neg_owner must name a question of the batch for every negative")
    for name, array in (("question", q_vecs), ("positive", pos_vecs), ("negative", neg_vecs)):
        if not np.all(np.isfinite(array)):
            raise InvariantError(f"Non-finite {name} vectors in loss input")

    candidates = np.vstack([pos_vecs, neg_vecs])
    scores = q_vecs @ candidates.T
    peak = scores.max(axis=1, keepdims=True)
    exp = np.exp(scores - peak)
    denom = exp.sum(axis=1, keepdims=True)
    log_norm = peak[:, 0] + np.log(denom[:, 0])
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - scores[rows, rows]))

    grad_scores = exp / denom
    grad_scores[rows, rows] -= 1.0
    grad_scores /= batch
    grad_q = grad_scores @ candidates
    grad_candidates = grad_scores.T @ q_vecs
    return loss, grad_q, grad_candidates[:batch], grad_candidates[batch:]


class AdamOptimizer:
    """Adam (β1=0.9, β2=0.999, ε=1e-8 by default) over named tensors, updated in place."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name, param in params.items():
            grad = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@dataclass
class _Batch:
    questions: List[str]
    positives: List[str]
    negatives: List[str]
    neg_owner: List[int]


def _assemble(batch: Sequence[TrainExample], passages: PassageStore) -> _Batch:
    negatives, owners = [], []
    for i, example in enumerate(batch):
        if example.hard_negative_passage_id is not None:
            negatives.append(passages.get(example.hard_negative_passage_id).text)
            owners.append(i)
    return _Batch(
        questions=[example.question for example in batch],
        positives=[passages.get(example.positive_passage_id).text for example in batch],
        negatives=negatives,
        neg_owner=owners,
    )


def batch_loss(model: DualEncoder, batch: Sequence[TrainExample], passages: PassageStore) -> float:
    parts = _assemble(batch, passages)
    q_out = encode_batch(model.q_params, parts.questions)[0]
    p_out = encode_batch(model.p_params, parts.positives + parts.negatives)[0]
    size = len(parts.questions)
    return in_batch_loss(q_out, p_out[:size], p_out[size:], parts.neg_owner)[0]


def compute_gradients(
    model: DualEncoder, batch: Sequence[TrainExample], passages: PassageStore
) -> Tuple[float, EncoderParams, EncoderParams]:
    """Loss of one batch and its exact gradients for the question and passage towers."""
    if not batch:
        raise DataError("Cannot compute gradients of an empty batch")
    parts = _assemble(batch, passages)
    q_out, q_cache = encode_batch(model.q_params, parts.questions)
    p_out, p_cache = encode_batch(model.p_params, parts.positives + parts.negatives)
    size = len(parts.questions)
    loss, grad_q, grad_pos, grad_neg = in_batch_loss(q_out, p_out[:size], p_out[size:], parts.neg_owner)
    q_grads = backward(model.q_params, q_cache, grad_q)
    p_grads = backward(model.p_params, p_cache, np.vstack([grad_pos, grad_neg]))
    return loss, q_grads, p_grads


def _named(model: DualEncoder) -> Dict[str, np.ndarray]:
    tensors = {f"q.{name}": array for name, array in model.q_params.tensors().items()}
    tensors.update({f"p.{name}": array for name, array in model.p_params.tensors().items()})
    return tensors


def _named_grads(q_grads: EncoderParams, p_grads: EncoderParams) -> Dict[str, np.ndarray]:
    grads = {f"q.{name}": array for name, array in q_grads.tensors().items()}
    grads.update({f"p.{name}": array for name, array in p_grads.tensors().items()})
    return grads


class ContrastiveTrainer:
    """Runs the epoch/batch loop for one training stage."""

    def __init__(
        self,
        model: DualEncoder,
        passages: PassageStore,
        config: TrainConfig,
        on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    ):
        self.model = model.copy()
        self.passages = passages
        self.config = config
        self.on_epoch = on_epoch
        self.optimizer = AdamOptimizer(config.learning_rate, config.beta1, config.beta2, config.eps)
        self.history: List[EpochRecord] = []

    def _check_references(self, data: Union[SyntheticPool, Sequence[TrainExample]]) -> None:
        if isinstance(data, SyntheticPool):
            ids = data.referenced_ids()
            has_negatives = any(e.negative_passage_id for examples in data.groups.values() for e in examples)
        else:
            ids = [e.positive_passage_id for e in data]
            ids += [e.hard_negative_passage_id for e in data if e.hard_negative_passage_id]
            has_negatives = any(e.hard_negative_passage_id for e in data)
        missing = sorted({pid for pid in ids if pid not in self.passages})
        if missing:
            raise DataError(f"Training data references unknown passage ids: {', '.join(missing[:5])}")
        if self.config.batch_size < 2 and not has_negatives:
            raise DataError("batch_size must be >= 2 when no hard negatives are present")

    def _epoch_examples(self, data, epoch: int) -> List[TrainExample]:
        if isinstance(data, SyntheticPool):
            examples = resample_epoch(data, epoch, self.config.seed)
        else:
            examples = list(data)
        order = derive_rng(self.config.seed, self.config.stage, "shuffle", epoch).permutation(len(examples))
        return [examples[i] for i in order]

    def _apply(self, accumulated: Dict[str, np.ndarray], count: int) -> None:
        self.optimizer.step(_named(self.model), {name: grad / count for name, grad in accumulated.items()})

    def train(self, data: Union[SyntheticPool, Sequence[TrainExample]]) -> DualEncoder:
        self._check_references(data)
        config = self.config
        logger.info(
            f"Training stage {config.stage}: {config.epochs} epochs, batch {config.batch_size}, "
            f"lr {config.learning_rate}, grad-accum {config.grad_accum_steps}, seed {config.seed}"
        )
        for epoch in range(config.epochs):
            examples = self._epoch_examples(data, epoch)
            if not examples:
                raise DataError(f"No training examples for stage {config.stage}")
            total_loss = 0.0
            accumulated: Dict[str, np.ndarray] = {}
            pending = 0
            for start in range(0, len(examples), config.batch_size):
                batch = examples[start:start + config.batch_size]
                loss, q_grads, p_grads = compute_gradients(self.model, batch, self.passages)
                total_loss += loss * len(batch)
                for name, grad in _named_grads(q_grads, p_grads).items():
                    if name in accumulated:
                        accumulated[name] += grad
                    else:
                        accumulated[name] = grad
                pending += 1
                if pending == config.grad_accum_steps:
                    self._apply(accumulated, pending)
                    accumulated, pending = {}, 0
            if pending:
                self._apply(accumulated, pending)
            record = EpochRecord(config.stage, epoch, total_loss / len(examples), len(examples))
            self.history.append(record)
            logger.info(f"[{config.stage}] epoch {epoch}: mean loss {record.mean_loss:.6f} over {record.examples} examples")
            if self.on_epoch:
                self.on_epoch(record)
        for name, tensor in _named(self.model).items():
            if not np.all(np.isfinite(tensor)):
                raise InvariantError(f"Training produced non-finite weights in {name}")
        return self.model


def train(
    model: DualEncoder,
    data: Union[SyntheticPool, Sequence[TrainExample]],
    passages: PassageStore,
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> DualEncoder:
    """Train a copy of model; the input model is left unchanged."""
    return ContrastiveTrainer(model, passages, config, on_epoch).train(data)


def write_training_log(path: str, records: Iterable[EpochRecord]) -> int:
    return write_jsonl(path, (record.to_dict() for record in records))


def finetune_examples(
    qa: Sequence[QAPair],
    passages: PassageStore,
    index: Optional[InvertedIndex] = None,
    depth: int = DEFAULT_NEGATIVE_DEPTH,
    seed: int = 0,
) -> List[TrainExample]:
    """
    Gold training examples: question, gold passage, and (with an index) a BM25
    hard negative containing none of the answers.
    """
    examples = []
    for position, pair in enumerate(qa):
        if pair.gold_passage_id is None:
            raise DataError(f"Gold QA pair {position} ({pair.question!r}) has no gold_passage_id")
        passages.get(pair.gold_passage_id)
        negative = None
        if index is not None:
            rng = derive_rng(seed, "gold-negative", position)
            negative = sample_negative(index, pair.question, pair.answers, pair.gold_passage_id, passages, rng, depth)
        examples.append(TrainExample(pair.question, pair.gold_passage_id, negative))
    logger.info(
        f"Prepared {len(examples)} finetuning examples "
        f"({sum(e.hard_negative_passage_id is not None for e in examples)} with hard negatives)"
    )
    return examples


def _checked_indices(name: str, array: np.ndarray, rows: Sequence[int]) -> List[Tuple[int, ...]]:
    if name == "embedding":
        return [(row, col) for row in rows for col in range(array.shape[1])]
    return [tuple(int(i) for i in index) for index in np.ndindex(array.shape)]


def _gradient_pairs(
    model: DualEncoder, batch: Sequence[TrainExample], passages: PassageStore, h: float
) -> List[Tuple[str, np.ndarray, np.ndarray]]:
    """(tensor label, analytic gradient, central-difference gradient) for every tensor of both towers."""
    if not batch:
        raise DataError("grad_check needs a nonempty batch")
    scratch = model.copy()
    _, q_grads, p_grads = compute_gradients(scratch, batch, passages)
    parts = _assemble(batch, passages)
    buckets = scratch.config.vocab_hash_buckets
    rows = {
        "q": sorted({int(b) for text in parts.questions for b in token_buckets(text, buckets)}),
        "p": sorted({int(b) for text in parts.positives + parts.negatives for b in token_buckets(text, buckets)}),
    }
    pairs = []
    for prefix, params, grads in (("q", scratch.q_params, q_grads), ("p", scratch.p_params, p_grads)):
        for name in TENSOR_NAMES:
            tensor = getattr(params, name)
            numeric = np.zeros_like(tensor)
            for index in _checked_indices(name, tensor, rows[prefix]):
                original = tensor[index]
                tensor[index] = original + h
                plus = batch_loss(scratch, batch, passages)
                tensor[index] = original - h
                minus = batch_loss(scratch, batch, passages)
                tensor[index] = original
                numeric[index] = (plus - minus) / (2.0 * h)
            pairs.append((f"{prefix}.{name}", getattr(grads, name), numeric))
    return pairs


def grad_check(
    model: DualEncoder,
    batch: Sequence[TrainExample],
    passages: PassageStore,
    h: float = 1e-5,
) -> float:
    """
    Largest per-tensor relative error between analytic and central-difference gradients.

    For each tensor: ||g_a - g_fd|| / max(1e-5, ||g_a|| + ||g_fd||). Embedding
    rows not hashed by the batch have zero gradient on both sides and are skipped.
    """
    worst = 0.0
    for label, analytic, numeric in _gradient_pairs(model, batch, passages, h):
        diff = np.linalg.norm(analytic - numeric)
        error = diff / max(GRAD_CHECK_FLOOR, np.linalg.norm(analytic) + np.linalg.norm(numeric))
        logger.debug(f"grad_check {label}: relative error {error:.3e}")
        worst = max(worst, float(error))
    return worst


def elementwise_grad_check(
    model: DualEncoder,
    batch: Sequence[TrainExample],
    passages: PassageStore,
    h: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """
    Largest per-entry relative error |g_a - g_fd| / max(floor, |g_a| + |g_fd|).

    Tensors whose analytic gradient norm is below GRAD_CHECK_FLOOR (p.b2) are
    skipped.
    """
    worst = 0.0
    for label, analytic, numeric in _gradient_pairs(model, batch, passages, h):
        if np.linalg.norm(analytic) < GRAD_CHECK_FLOOR:
            continue
        errors = np.abs(analytic - numeric) / np.maximum(floor, np.abs(analytic) + np.abs(numeric))
        logger.debug(f"elementwise grad_check {label}: worst entry {errors.max():.3e}")
        worst = max(worst, float(errors.max()))
    return worst
