"""
Trainable dual encoder.

Each tower mean-pools hashed token embeddings and applies a two-layer tanh
MLP: out = W2 · tanh(W1 · x + b1) + b2. Questions and passages go through
independent towers and are compared by raw dot product.
"""

import copy
import hashlib
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from artifacts import read_tensor_file, tensor_bytes, write_tensor_file
from errors import DataError
from lexical_index import tokenize
from seeding import fnv1a_64

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "dual-encoder"
TENSOR_NAMES = ("embedding", "W1", "b1", "W2", "b2")
INIT_SCALE = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    out_dim: int = 64
    vocab_hash_buckets: int = 32768
    seed: int = 0

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "out_dim", "vocab_hash_buckets"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise DataError(f"EncoderConfig.{name} must be an integer >= 1, got {value!r}")


@dataclass
class EncoderParams:
    """Weights of one tower; also used to hold gradients of the same shapes."""

    embedding: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def tensors(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{name: array.copy() for name, array in self.tensors().items()})

    @classmethod
    def zeros_like(cls, other: "EncoderParams") -> "EncoderParams":
        return cls(**{name: np.zeros_like(array) for name, array in other.tensors().items()})

    @classmethod
    def zeros(cls, config: EncoderConfig) -> "EncoderParams":
        return cls(
            embedding=np.zeros((config.vocab_hash_buckets, config.embed_dim)),
            W1=np.zeros((config.hidden_dim, config.embed_dim)),
            b1=np.zeros(config.hidden_dim),
            W2=np.zeros((config.out_dim, config.hidden_dim)),
            b2=np.zeros(config.out_dim),
        )

    def check(self, config: EncoderConfig) -> None:
        expected = EncoderParams.zeros(config).tensors()
        for name, array in self.tensors().items():
            if array.shape != expected[name].shape:
                raise DataError(f"Tensor {name} has shape {array.shape}, expected {expected[name].shape}")
            if not np.all(np.isfinite(array)):
                raise DataError(f"Tensor {name} has non-finite entries")


@dataclass
class EncodeCache:
    """Intermediates of encode_batch needed for exact backprop."""

    buckets: List[np.ndarray]
    pooled: np.ndarray
    hidden: np.ndarray


def token_buckets(text: str, n_buckets: int) -> np.ndarray:
    """Sorted bucket ids of the text's tokens (duplicates kept)."""
    ids = [fnv1a_64(token) % n_buckets for token in tokenize(text)]
    return np.array(sorted(ids), dtype=np.int64)


def _uniform_tower(config: EncoderConfig, seed: int) -> EncoderParams:
    rng = np.random.default_rng(seed)
    shapes = EncoderParams.zeros(config).tensors()
    return EncoderParams(**{
        name: rng.uniform(-INIT_SCALE, INIT_SCALE, size=shapes[name].shape) for name in TENSOR_NAMES
    })


def encode_batch(params: EncoderParams, texts: Sequence[str]) -> Tuple[np.ndarray, EncodeCache]:
    """
    Encode texts into an [n × out_dim] matrix plus the backprop cache.

    Pooling sums bucket rows in sorted bucket order, so token order never
    changes the result.
    """
    n_buckets, embed_dim = params.embedding.shape
    buckets = [token_buckets(text, n_buckets) for text in texts]
    pooled = np.zeros((len(texts), embed_dim))
    for row, ids in enumerate(buckets):
        if len(ids):
            pooled[row] = params.embedding[ids].sum(axis=0) / len(ids)
    hidden = np.tanh(pooled @ params.W1.T + params.b1)
    out = hidden @ params.W2.T + params.b2
    return out, EncodeCache(buckets=buckets, pooled=pooled, hidden=hidden)


def encode(params: EncoderParams, text: str) -> np.ndarray:
    return encode_batch(params, [text])[0][0]


def backward(params: EncoderParams, cache: EncodeCache, grad_out: np.ndarray) -> EncoderParams:
    """Gradients of a scalar loss w.r.t. every tower tensor, given dL/d(out)."""
    grads = EncoderParams.zeros_like(params)
    grads.W2 = grad_out.T @ cache.hidden
    grads.b2 = grad_out.sum(axis=0)
    grad_pre = (grad_out @ params.W2) * (1.0 - cache.hidden ** 2)
    grads.W1 = grad_pre.T @ cache.pooled
    grads.b1 = grad_pre.sum(axis=0)
    grad_pooled = grad_pre @ params.W1
    for row, ids in enumerate(cache.buckets):
        if len(ids):
            np.add.at(grads.embedding, ids, grad_pooled[row] / len(ids))
    return grads


def similarity(q_vec: np.ndarray, p_vec: np.ndarray) -> float:
    q_vec, p_vec = np.asarray(q_vec, dtype=float), np.asarray(p_vec, dtype=float)
    if q_vec.shape != p_vec.shape or q_vec.ndim != 1:
        raise DataError(f"Dimension mismatch: {q_vec.shape} vs {p_vec.shape}")
    return float(q_vec @ p_vec)


@dataclass
class DualEncoder:
    q_params: EncoderParams
    p_params: EncoderParams
    config: EncoderConfig

    def encode_questions(self, texts: Sequence[str]) -> np.ndarray:
        return encode_batch(self.q_params, texts)[0]

    def encode_passages(self, texts: Sequence[str]) -> np.ndarray:
        return encode_batch(self.p_params, texts)[0]

    def copy(self) -> "DualEncoder":
        return DualEncoder(self.q_params.copy(), self.p_params.copy(), copy.copy(self.config))

    def _tensors(self) -> Dict[str, np.ndarray]:
        tensors = {f"q.{name}": array for name, array in self.q_params.tensors().items()}
        tensors.update({f"p.{name}": array for name, array in self.p_params.tensors().items()})
        return tensors

    def to_bytes(self) -> bytes:
        return tensor_bytes(CHECKPOINT_KIND, {"config": asdict(self.config)}, self._tensors())

    def fingerprint(self) -> str:
        """sha256 of the checkpoint bytes."""
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path: str) -> str:
        digest = write_tensor_file(path, CHECKPOINT_KIND, {"config": asdict(self.config)}, self._tensors())
        logger.info(f"Saved checkpoint {path} ({digest[:12]})")
        return digest

    @classmethod
    def load(cls, path: str) -> "DualEncoder":
        meta, tensors = read_tensor_file(path, CHECKPOINT_KIND)
        try:
            config = EncoderConfig(**meta["config"])
            towers = [
                EncoderParams(**{name: tensors[f"{prefix}.{name}"].astype(np.float64) for name in TENSOR_NAMES})
                for prefix in ("q", "p")
            ]
        except (KeyError, TypeError) as e:
            raise DataError(f"{path}: incomplete checkpoint: {e}") from e
        for tower in towers:
            tower.check(config)
        logger.info(f"Loaded checkpoint {path}")
        return cls(towers[0], towers[1], config)


def init_params(config: EncoderConfig) -> DualEncoder:
    """Uniform(-0.1, 0.1) weights; question tower seeded by seed, passage tower by seed + 1."""
    return DualEncoder(
        q_params=_uniform_tower(config, config.seed),
        p_params=_uniform_tower(config, config.seed + 1),
        config=config,
    )
