"""
Exact dot-product top-k search over encoded passages.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from artifacts import read_tensor_file, write_tensor_file
from corpus import Passage
from encoder import DualEncoder
from errors import DataError
from lexical_index import ScoredHit

logger = logging.getLogger(__name__)

DENSE_KIND = "dense-index"


@dataclass
class DenseIndex:
    vectors: np.ndarray
    passage_ids: List[str]
    encoder_fingerprint: str

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.passage_ids):
            raise DataError(
                f"Dense index has {self.vectors.shape[0] if self.vectors.ndim == 2 else '?'} rows "
                f"for {len(self.passage_ids)} ids"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise DataError("Dense index contains non-finite entries")

    def __len__(self) -> int:
        return len(self.passage_ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def search(self, q_vec: np.ndarray, k: int) -> List[ScoredHit]:
        """Top-k rows by dot product, descending; ties keep ascending row order."""
        if k < 1:
            raise DataError(f"k must be >= 1, got {k}")
        q_vec = np.asarray(q_vec, dtype=np.float64)
        if q_vec.shape != (self.dim,):
            raise DataError(f"Query has shape {q_vec.shape}, index dimension is {self.dim}")
        if not len(self):
            return []
        scores = self.vectors @ q_vec
        order = np.argsort(-scores, kind="stable")[:k]
        return [ScoredHit(self.passage_ids[row], float(scores[row])) for row in order]

    def search_many(self, q_vecs: np.ndarray, k: int) -> List[List[ScoredHit]]:
        return [self.search(q_vec, k) for q_vec in np.atleast_2d(q_vecs)]

    def save(self, path: str) -> str:
        meta = {"passage_ids": self.passage_ids, "encoder_fingerprint": self.encoder_fingerprint}
        digest = write_tensor_file(path, DENSE_KIND, meta, {"vectors": self.vectors})
        logger.info(f"Saved dense index ({len(self)} rows) to {path}")
        return digest

    @classmethod
    def load(cls, path: str, expected_fingerprint: Optional[str] = None) -> "DenseIndex":
        meta, tensors = read_tensor_file(path, DENSE_KIND)
        try:
            index = cls(
                vectors=tensors["vectors"].astype(np.float64),
                passage_ids=[str(pid) for pid in meta["passage_ids"]],
                encoder_fingerprint=str(meta["encoder_fingerprint"]),
            )
        except KeyError as e:
            raise DataError(f"{path}: incomplete dense index: {e}") from e
        if expected_fingerprint is not None and expected_fingerprint != index.encoder_fingerprint:
            logger.warning(
                f"Dense index {path} was built with encoder {index.encoder_fingerprint[:12]}, "
                f"but the query encoder is {expected_fingerprint[:12]}"
            )
        return index


def build_dense(encoder: DualEncoder, passages: Iterable[Passage]) -> DenseIndex:
    """Encode every passage with the passage tower; row order follows input order."""
    passages = list(passages)
    seen = set()
    for passage in passages:
        if passage.id in seen:
            raise DataError(f"Duplicate passage id: {passage.id}")
        seen.add(passage.id)
    if passages:
        vectors = encoder.encode_passages([passage.text for passage in passages])
    else:
        vectors = np.zeros((0, encoder.config.out_dim))
    index = DenseIndex(vectors, [passage.id for passage in passages], encoder.fingerprint())
    logger.info(f"Built dense index over {len(index)} passages")
    return index


def dense_search(index: DenseIndex, q_vec: np.ndarray, k: int) -> List[ScoredHit]:
    return index.search(q_vec, k)
