"""
Report Generator - write result tables and run summaries to an output directory
"""
from typing import Dict, List, Optional, Any, Sequence
from datetime import datetime
import json
import logging
from pathlib import Path
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12e"


@dataclass
class ReportMetadata:
    """Report metadata"""
    report_type: str
    subcommand: str
    config_path: str
    seed: int = 0
    timestamp: Optional[str] = None


def _plain(value: Any) -> Any:
    """JSON-safe version of numpy scalars, arrays, complex numbers and dataclasses"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    if hasattr(value, "__dataclass_fields__"):
        return _plain(asdict(value))
    return value


def complex_columns(rows: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Split complex entries into <name>_re / <name>_im columns"""
    out = []
    for row in rows:
        flat = {}
        for key, value in row.items():
            if isinstance(value, (complex, np.complexfloating)):
                flat[f"{key}_re"] = float(value.real)
                flat[f"{key}_im"] = float(value.imag)
            else:
                flat[key] = value
        out.append(flat)
    return out


class ReportGenerator:
    """Writes CSV tables and JSON summaries; every write goes through one instance"""

    def __init__(self, output_dir: str, subcommand: str = "", config_path: str = "", seed: int = 0,
                 stamp: bool = False):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.metadata = ReportMetadata(
            report_type="bclab",
            subcommand=subcommand,
            config_path=str(config_path),
            seed=seed,
            timestamp=datetime.now().isoformat() if stamp else None,
        )
        self.written: List[Path] = []

    def write_csv(self, name: str, rows: Sequence[Dict[str, Any]],
                  columns: Optional[Sequence[str]] = None) -> Path:
        """UTF-8, comma separated, header row, '%.12e' floats, '\\n' line ends"""
        frame = pd.DataFrame(complex_columns(rows), columns=list(columns) if columns else None)
        path = self.output_dir / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
        self.written.append(path)
        logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_matrix(self, name: str, matrix: np.ndarray) -> Path:
        """Complex matrix as row, col, re, im records"""
        matrix = np.atleast_2d(matrix)
        rows, cols = np.indices(matrix.shape)
        frame = pd.DataFrame({"row": rows.ravel(), "col": cols.ravel(),
                              "re": matrix.real.ravel(), "im": matrix.imag.ravel()})
        path = self.output_dir / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
        self.written.append(path)
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.output_dir / name
        body = {"metadata": asdict(self.metadata), "result": _plain(payload)}
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(body, f, indent=2, sort_keys=True)
            f.write("\n")
        self.written.append(path)
        logger.info(f"Wrote summary {path}")
        return path

    def build_summary(self, title: str, rows: Dict[str, Any]) -> str:
        """Plain-text block for the console"""
        summary = []
        summary.append("=" * 60)
        summary.append(title.upper())
        summary.append("=" * 60)
        for key, value in rows.items():
            summary.append(f"{key:28} {value}")
        summary.append("=" * 60)
        return "\n".join(summary)
