import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

BUFFER_SIZE = 65536  # Read in 64k chunks


def _update_from_file(sha256_hash, file_path: Path) -> None:
    with open(file_path, "rb") as f:
        while True:
            data = f.read(BUFFER_SIZE)
            if not data:
                break
            sha256_hash.update(data)


def calculate_sha256(file_path: Union[str, Path]) -> Optional[str]:
    """
    Calculates the SHA-256 hash of a file, or of a directory bundle (.osb, .oss)
    as the hash over its files in sorted relative-path order.

    Returns:
        The SHA-256 hash as a hexadecimal string, or None if the path is missing or unreadable.
    """
    try:
        file_path = Path(file_path)
    except TypeError:
        logger.error(f"Invalid file path type: {type(file_path)}. Expected Path object or string.")
        return None

    sha256_hash = hashlib.sha256()
    try:
        if file_path.is_file():
            _update_from_file(sha256_hash, file_path)
        elif file_path.is_dir():
            for member in sorted(p for p in file_path.rglob("*") if p.is_file()):
                sha256_hash.update(member.relative_to(file_path).as_posix().encode("utf-8"))
                _update_from_file(sha256_hash, member)
        else:
            logger.error(f"File not found: {file_path}")
            return None
        return sha256_hash.hexdigest()
    except IOError as e:
        logger.error(f"Error reading file {file_path}: {e}")
        return None


def json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=json_default)


def hash_json(obj: Any) -> str:
    """SHA-256 of the canonical (sorted-key, compact) JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()

