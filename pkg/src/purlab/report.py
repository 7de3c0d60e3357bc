"""Report and manifest emission.

Reports (JSON + CSV) are pure functions of (config, seed): no
timestamps, sorted keys, fixed float formatting, so identical runs emit
identical bytes. The manifest carries provenance (timestamps included)
and lists every emitted file.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from purlab import __version__
from purlab.metrics import MetricReport

__all__ = ["config_hash", "emit_report", "load_report", "write_manifest"]

CSV_HEADER = "image_id,condition,metric,value"


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"),
                           default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _report_json(report: MetricReport, config: dict) -> str:
    payload = report.to_dict()
    payload["config"] = config
    return json.dumps(payload, sort_keys=True, indent=2, default=str) + "\n"


def _report_csv(report: MetricReport) -> str:
    lines = [CSV_HEADER]
    for image_id, condition, metric, value in report.records:
        lines.append(f"{image_id},{condition},{metric},{value!r}")
    return "\n".join(lines) + "\n"


def emit_report(reports, out_dir, config: dict, formats=("json", "csv")
                ) -> list[Path]:
    """Write one JSON/CSV pair per report plus a run manifest.

    Returns the emitted file paths (manifest last).
    """
    if not reports:
        raise ValueError("no reports to emit")
    if isinstance(reports, MetricReport):
        reports = [reports]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for report in reports:
        stem = f"report_{report.task}_seed{report.seed}"
        if "json" in formats:
            path = out / f"{stem}.json"
            path.write_text(_report_json(report, config))
            written.append(path)
        if "csv" in formats:
            path = out / f"{stem}.csv"
            path.write_text(_report_csv(report))
            written.append(path)
    manifest = write_manifest(out, config, [p.name for p in written])
    return written + [manifest]


def load_report(path) -> MetricReport:
    payload = json.loads(Path(path).read_text())
    return MetricReport.from_dict(payload)


def write_manifest(out_dir, config: dict, artifact_names: list[str]) -> Path:
    out = Path(out_dir)
    entries = []
    for name in artifact_names:
        digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
        entries.append({"file": name, "sha256": digest})
    manifest = {
        "config_hash": config_hash(config),
        "config": config,
        "artifacts": entries,
        "version": __version__,
        "created_unix": time.time(),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2,
                               default=str) + "\n")
    return path
