"""CSV tables with a one-line provenance header.

Every emitted table starts with `# digest=... seed=... timestamp=...`,
then a column header row, then data rows. Float cells use fixed 6-decimal
formatting; the provenance line is ignored when comparing runs.
"""

from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path


def provenance_line(digest: str, seed: int) -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return f"# digest={digest} seed={seed} timestamp={stamp}"


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_table(path: Path, columns: list[str], rows: list[list], provenance: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [provenance, ",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row width {len(row)} != column count {len(columns)}")
        lines.append(",".join(format_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_table(path: Path) -> tuple[str, list[str], list[list[str]]]:
    """Returns (provenance line, columns, raw string rows)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing provenance header")
    if len(lines) < 2:
        raise ValueError(f"{path}: missing column header")
    columns = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:] if line.strip()]
    return lines[0], columns, rows


def data_rows_bytes(path: Path) -> bytes:
    """Everything except the provenance line, for bitwise run comparison."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return "\n".join(lines[1:]).encode("utf-8")
