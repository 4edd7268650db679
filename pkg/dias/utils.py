"""
Shared utilities for DIAS.

Provides:
- Project paths and environment settings
- Numerical constants
- Logging setup
- Config file loading
- JSON / JSON-lines / CSV writers
"""

import csv
import json
import logging
import os
from pathlib import Path
from typing import Any, Iterable, Sequence

import torch
import yaml
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent
CONFIG_DIR = PROJECT_ROOT / "config"
DEFAULT_CONFIG_FILE = CONFIG_DIR / "dias.yaml"

# Environment variables with defaults
DIAS_LOG_LEVEL = os.getenv("DIAS_LOG_LEVEL", "INFO")
DIAS_OUT_DIR = os.getenv("DIAS_OUT_DIR", "out")
DIAS_NUM_THREADS = int(os.getenv("DIAS_NUM_THREADS", "1"))

# Stabilizer added to every norm and denominator
EPS = 1e-8

# All differentiable computation runs at double precision
DTYPE = torch.float64


def setup_logging(level: int | str = DIAS_LOG_LEVEL) -> logging.Logger:
    """
    Setup logging configuration.

    Args:
        level: Logging level name or number (default: DIAS_LOG_LEVEL)

    Returns:
        Package logger
    """
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    return logging.getLogger("dias")


def setup_torch(num_threads: int = DIAS_NUM_THREADS) -> None:
    """Pin torch to double precision and a fixed thread count."""
    torch.set_default_dtype(DTYPE)
    torch.set_num_threads(num_threads)


def load_config_file(path: str | Path) -> dict:
    """
    Load a YAML or JSON configuration file.

    JSON is a subset of YAML, so both go through the YAML parser.

    Args:
        path: Config file path

    Returns:
        Parsed content as dict
    """
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def write_json(path: str | Path, payload: Any) -> None:
    """
    Write a JSON document with stable key order.

    Args:
        path: Output path
        payload: JSON-serializable object
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def append_jsonl(path: str | Path, record: dict) -> None:
    """
    Append one record to a JSON-lines file.

    Args:
        path: Output path
        record: JSON-serializable record
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """
    Write a CSV table with a header row.

    Args:
        path: Output path
        header: Column names
        rows: Row values in header order

    Returns:
        Number of data rows written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
            count += 1
    return count


def load_jsonl(path: str | Path) -> list[dict]:
    """
    Load all records of a JSON-lines file.

    Args:
        path: Input path

    Returns:
        List of records (malformed lines are skipped with a warning)
    """
    path = Path(path)
    if not path.exists():
        return []

    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            line = line.strip()
            if line:
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    logging.getLogger(__name__).warning(
                        f"Skipping malformed line {line_num} in {path}"
                    )
    return records
