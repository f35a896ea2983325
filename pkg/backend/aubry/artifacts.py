"""
Artifact writer for experiment runs.

One writer per run owns the output directory; CSV numbers are written with
17 significant digits so reruns produce byte-identical files.
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

NUMBER_FORMAT = "%.17g"


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return NUMBER_FORMAT % value
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


class ArtifactWriter:
    """Writes CSV tables and JSON documents into one output directory."""

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.written = []

    def _path(self, name):
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir / name

    def csv(self, name, header, rows):
        path = self._path(name)
        rows = np.asarray(rows) if not isinstance(rows, list) else rows
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(value) for value in row])
        self.written.append(str(path))
        logger.debug("wrote %s (%d rows)", path, len(rows))
        return path

    def table(self, name, artifact):
        """CSV dump of any result exposing csv_header() / csv_rows()."""
        return self.csv(name, artifact.csv_header(), artifact.csv_rows())

    def json(self, name, payload):
        path = self._path(name)
        with path.open("w") as handle:
            json.dump(_jsonable(payload), handle, indent=2, sort_keys=True)
            handle.write("\n")
        self.written.append(str(path))
        return path


def jsonable(payload):
    """Plain-Python copy of a payload holding numpy scalars and arrays."""
    return _jsonable(payload)
