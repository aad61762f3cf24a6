"""Utility helpers: RNG streams, worker pools and deterministic file emission."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
import io
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np

from . import config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream ``(seed, *keys)``."""

    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)])


def thread_count(default: int = config.DEFAULT_THREADS) -> int:
    raw = os.environ.get(config.THREADS_ENV)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", config.THREADS_ENV, raw)
        return default
    return max(1, value)


def parallel_map(func: Callable[[T], R], items: Sequence[T], threads: Optional[int] = None) -> List[R]:
    """Map in a thread pool; the result order always follows ``items``."""

    workers = thread_count() if threads is None else max(1, threads)
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def format_number(value: Any) -> str:
    """Shortest round-trip decimal for floats; ``inf``/``nan`` spelled out."""

    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""

    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return value
        return format_number(value)
    return value


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    return buffer.getvalue()


def json_text(payload: Any) -> str:
    return json.dumps(jsonable(payload), indent=2) + "\n"


def write_text(path: Path | str, text: str) -> Path:
    target = Path(path)
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8")
    logger.info("wrote %s", target)
    return target


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    return write_text(path, csv_text(header, rows))


def write_json(path: Path | str, payload: Any) -> Path:
    return write_text(path, json_text(payload))


__all__ = [
    "stream_rng",
    "thread_count",
    "parallel_map",
    "format_number",
    "jsonable",
    "csv_text",
    "json_text",
    "write_text",
    "write_csv",
    "write_json",
]
