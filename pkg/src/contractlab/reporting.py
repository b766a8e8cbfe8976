"""JSON reports and CSV data files.

A report file holds two blocks: ``report`` (deterministic for a given config
and seed) and ``metadata`` (generator, timestamp, and the SHA-256 of the
canonical report text). Reruns therefore differ only inside ``metadata``.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import __version__

logger = logging.getLogger(__name__)

GENERATOR: str = "contractlab"
REPORT_NAME: str = "report.json"


def make_json_safe(obj: object) -> object:
    """Recursively convert numpy values, enums, paths and report objects to JSON types.

    Non-finite floats become the strings "nan", "inf" and "-inf".
    """
    if hasattr(obj, "to_dict"):
        return make_json_safe(obj.to_dict())  # type: ignore[attr-defined]
    if isinstance(obj, dict):
        return {str(k): make_json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [make_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return make_json_safe(obj.tolist())
    if isinstance(obj, np.generic):
        return make_json_safe(obj.item())
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (date, datetime)):
        return obj.isoformat()
    return obj


def canonical_json(body: Any) -> str:
    return json.dumps(make_json_safe(body), indent=2, sort_keys=True, ensure_ascii=False)


def body_digest(body: Any) -> str:
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def _is_foreign_output(directory: Path) -> tuple[bool, str]:
    """Check whether ``directory`` holds a report written by another tool.

    Returns (is_foreign, generator_identifier). A missing or unreadable
    report counts as not foreign only when absent.
    """
    path = directory / REPORT_NAME
    if not path.is_file():
        return False, ""
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError):
        return True, "unreadable"
    generator = ""
    if isinstance(data, dict) and isinstance(data.get("metadata"), dict):
        generator = str(data["metadata"].get("generator", ""))
    if generator.startswith(GENERATOR):
        return False, generator
    return True, generator or "unknown"


@dataclass
class ReportResult:
    """Where a report went, or why it could not be written."""

    success: bool
    path: Optional[Path] = None
    digest: str = ""
    error: Optional[str] = None


def write_report(directory: Path, body: Any, force: bool = False) -> ReportResult:
    """Write ``report.json`` into ``directory``.

    An existing report from another generator is kept unless ``force=True``.
    """
    directory = Path(directory)
    if not force:
        foreign, generator = _is_foreign_output(directory)
        if foreign:
            return ReportResult(
                success=False,
                error=(
                    f"{directory / REPORT_NAME} was generated by '{generator}'. "
                    "Use --force to overwrite."
                ),
            )
    directory.mkdir(parents=True, exist_ok=True)
    digest = body_digest(body)
    document = {
        "report": make_json_safe(body),
        "metadata": {
            "generator": f"{GENERATOR} {__version__}",
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "body_sha256": digest,
        },
    }
    path = directory / REPORT_NAME
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False))
        fh.write("\n")
    logger.info("wrote %s", path)
    return ReportResult(success=True, path=path, digest=digest)


def _cell(value: object) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    if value is None:
        return ""
    return str(value)


@dataclass
class CsvTable:
    header: list[str]
    rows: list[Sequence[object]] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)


def write_csv(path: Path, table: CsvTable) -> Path:
    """Comma-separated, header row, LF line endings, 17 significant digits.

    ``comments`` are written first as ``# key=value`` lines.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in table.comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(table.header) + "\n")
        for row in table.rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    logger.info("wrote %s (%d rows)", path, len(table.rows))
    return path


def read_samples(path: Path) -> np.ndarray:
    """Read a sample CSV (header row, optional ``#`` comments) as an (n, d) array."""
    lines = [
        line
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip() and not line.startswith("#")
    ]
    if len(lines) < 2:
        raise ValueError(f"{path} has no sample rows")
    return np.loadtxt(lines[1:], delimiter=",", ndmin=2)


def sample_rows(x: np.ndarray, y: np.ndarray, coupled_at: Iterable[float]) -> CsvTable:
    """Terminal samples of a coupled ensemble: path_id, x..., y..., coupled_at."""
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    dim = x.shape[1]
    header = ["path_id"] + [f"x{i}" for i in range(dim)] + [f"y{i}" for i in range(dim)] + ["coupled_at"]
    rows = [
        [i, *x[i].tolist(), *y[i].tolist(), when]
        for i, when in enumerate(coupled_at)
    ]
    return CsvTable(header=header, rows=rows)
