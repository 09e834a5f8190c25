import hashlib
import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .constants import settings

HASH_CHUNK = 1 << 16
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

logger = logging.getLogger(__name__)


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        while chunk := f.read(HASH_CHUNK):
            digest.update(chunk)
    return digest.hexdigest()


def payload_digest(payload: Any) -> str:
    """Digest of a JSON-serializable payload, stable under key order."""
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def now() -> datetime:
    return EPOCH if settings.fixed_clock else datetime.now(timezone.utc)


class Stopwatch:
    """Wall-clock timer that reads zero in fixed-clock mode."""

    def __init__(self) -> None:
        self._start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        if settings.fixed_clock:
            return 0.0
        return time.perf_counter() - self._start


def json_safe(value: Any) -> Any:
    """NaN/inf → None and numpy scalars → Python numbers, so the payload stays valid JSON."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value
