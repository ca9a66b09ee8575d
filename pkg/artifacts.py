"""
On-disk artifact helpers shared by every pipeline stage.
Atomic writes, JSON/JSONL codecs and the versioned tensor-file format.
"""

import hashlib
import io
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from typing import Any, Dict, Iterable, Iterator, List, Tuple

import numpy as np

from errors import DataError

logger = logging.getLogger(__name__)

TENSOR_MAGIC = b"RETROTENSORS\n"
TENSOR_FORMAT_VERSION = 1


def require_file(path: str) -> str:
    """Raise DataError naming path unless it is an existing file."""
    if not os.path.isfile(path):
        raise DataError(f"input file not found: {path}")
    return path


@contextmanager
def atomic_write(path: str, mode: str = "w"):
    """
    Open a temp file next to path and move it into place on success.

    On any exception the temp file is removed and path is left untouched.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    if "b" in mode:
        handle = os.fdopen(fd, "wb")
    else:
        handle = os.fdopen(fd, "w", encoding="utf-8", newline="\n")
    try:
        with handle:
            yield handle
        os.replace(temp_path, path)
        logger.debug(f"Wrote {path}")
    except BaseException:
        try:
            os.unlink(temp_path)
        except OSError:
            pass
        raise


def dumps_json(record: Any) -> str:
    """Canonical single-line JSON: sorted keys, no ASCII escaping."""
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(", ", ": "))


def write_json(path: str, record: Any) -> None:
    with atomic_write(path) as handle:
        handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False, indent=2))
        handle.write("\n")


def read_json(path: str) -> Any:
    require_file(path)
    with open(path, "r", encoding="utf-8") as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON: {e}") from e


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> int:
    """Write records one per line; returns the record count."""
    count = 0
    with atomic_write(path) as handle:
        for record in records:
            handle.write(dumps_json(record))
            handle.write("\n")
            count += 1
    return count


def iter_jsonl(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line_number, object) pairs, skipping blank lines."""
    require_file(path)
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_number}: invalid JSON: {e.msg}") from e
            if not isinstance(record, dict):
                raise DataError(f"{path}:{line_number}: expected a JSON object")
            yield line_number, record


def tensor_bytes(kind: str, meta: Dict[str, Any], tensors: Dict[str, np.ndarray]) -> bytes:
    """
    Serialize named arrays to the tensor-file format.

    Layout: magic line, one JSON header line, then each array as a .npy record
    in header order. No timestamps are written, so equal inputs give equal bytes.
    """
    header = {
        "kind": kind,
        "version": TENSOR_FORMAT_VERSION,
        "meta": meta,
        "tensors": list(tensors.keys()),
    }
    buffer = io.BytesIO()
    buffer.write(TENSOR_MAGIC)
    buffer.write(dumps_json(header).encode("utf-8"))
    buffer.write(b"\n")
    for name in tensors:
        array = np.ascontiguousarray(tensors[name])
        np.lib.format.write_array(buffer, array, version=(1, 0), allow_pickle=False)
    return buffer.getvalue()


def write_tensor_file(path: str, kind: str, meta: Dict[str, Any], tensors: Dict[str, np.ndarray]) -> str:
    """Write a tensor file atomically; returns its sha256 hex digest."""
    payload = tensor_bytes(kind, meta, tensors)
    with atomic_write(path, "wb") as handle:
        handle.write(payload)
    return hashlib.sha256(payload).hexdigest()


def read_tensor_file(path: str, kind: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read a tensor file written by write_tensor_file, checking kind and version."""
    require_file(path)
    with open(path, "rb") as handle:
        if handle.readline() != TENSOR_MAGIC:
            raise DataError(f"{path}: not a tensor file")
        try:
            header = json.loads(handle.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: corrupt tensor header") from e
        if header.get("kind") != kind:
            raise DataError(f"{path}: expected a {kind} file, found {header.get('kind')!r}")
        if header.get("version") != TENSOR_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported {kind} version {header.get('version')!r}")
        tensors: Dict[str, np.ndarray] = {}
        try:
            for name in header["tensors"]:
                tensors[name] = np.lib.format.read_array(handle, allow_pickle=False)
        except (ValueError, EOFError) as e:
            raise DataError(f"{path}: truncated tensor data") from e
    return header.get("meta", {}), tensors


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def split_list_option(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]
