"""Run-directory writer: delimited tables, JSON documents and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .metrics import dump_json


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if v != v else repr(v)
    return str(v)


class RunDirectory:
    """Collects every artifact of one command; all writes stay inside ``path``."""

    def __init__(self, path, config: dict, command: str, fmt: str = "csv"):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.command = command
        self.fmt = fmt
        self.files: list[str] = []
        self._started = time.perf_counter()
        self._config_line = "# config=" + json.dumps(config, sort_keys=True,
                                                      separators=(",", ":")) + "\n"

    def register(self, name: str) -> Path:
        """Record ``name`` (relative to the run directory) for the manifest checksums."""
        if name not in self.files:
            self.files.append(name)
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.register(name)
        p.write_text(text, encoding="utf-8", newline="\n")
        return p

    def write_json(self, name: str, obj) -> Path:
        doc = {"config": self.config, "command": self.command, **obj}
        return self.write_text(name, dump_json(doc) + "\n")

    def write_csv_text(self, name: str, body: str) -> Path:
        """Write already formatted CSV, prefixed with the config echo comment."""
        return self.write_text(name, self._config_line + body)

    def write_table(self, stem: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        """A table as ``stem.csv`` or ``stem.json`` depending on the run's format."""
        rows = [list(r) for r in rows]
        if self.fmt == "json":
            records = [dict(zip(header, r)) for r in rows]
            return self.write_json(f"{stem}.json", {"columns": list(header), "rows": records})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        return self.write_csv_text(f"{stem}.csv", buf.getvalue())

    def finalize(self) -> Path:
        checksums = {}
        for name in sorted(self.files):
            checksums[name] = hashlib.sha256((self.path / name).read_bytes()).hexdigest()
        manifest = {
            "command": self.command,
            "tool_version": __version__,
            "config": self.config,
            "files": checksums,
            "wall_clock_s": round(time.perf_counter() - self._started, 3),
        }
        p = self.path / "manifest.json"
        p.write_text(dump_json(manifest) + "\n", encoding="utf-8", newline="\n")
        return p


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Read a table written by :meth:`RunDirectory.write_table` (CSV or JSON)."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        header = doc["columns"]
        return header, [[r[h] for h in header] for r in doc["rows"]]
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]
