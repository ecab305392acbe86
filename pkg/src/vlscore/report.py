"""Report emission: config echo, JSON and text reports, plot-data CSVs.

Every run directory gets a config echo (resolved parameters plus input
file digests) sufficient to reproduce the run bit-for-bit. All emitters
are deterministic: keys sorted, floats via repr.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_config_echo(out_dir, subcommand: str, params: dict, inputs: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = {
        "subcommand": subcommand,
        "params": params,
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(p)}
            for name, p in sorted(inputs.items())
            if p is not None
        },
    }
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_json_report(out_dir, payload: dict, name: str = "report.json") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_text_table(out_dir, title: str, rows: list[tuple[str, str]],
                     name: str = "report.txt") -> None:
    """Two-column human-readable summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max((len(k) for k, _ in rows), default=0)
    lines = [title, "=" * len(title)]
    lines += [f"{k.ljust(width)}  {v}" for k, v in rows]
    with open(out / name, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_csv(path, header: list[str], rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def fmt(x: float, digits: int = 4) -> str:
    return f"{x:.{digits}f}"
