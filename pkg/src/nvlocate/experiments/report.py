"""Study reports and reproducibility manifests.

Every study directory carries the emitted config, its data products,
a report.json with the headline metrics, and a manifest.json hashing
every file.  Nothing written here embeds timestamps or machine state,
so re-running a study with the same config and seed reproduces the
directory byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .config import ScenarioConfig


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class StudyReport:
    """Headline metrics and the file manifest of one study run."""

    study: str
    config_sha256: str
    seed: int
    metrics: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "study": self.study,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "metrics": self.metrics,
            "files": self.files,
        }


def finalize_study(
    out_dir: Path, config: ScenarioConfig, study: str, metrics: dict
) -> StudyReport:
    """Write report.json and manifest.json over the directory contents."""
    out_dir = Path(out_dir)
    report = StudyReport(
        study=study, config_sha256=config.sha256(), seed=config.seed,
        metrics=metrics,
    )
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True)
    )

    files = {}
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[str(path.relative_to(out_dir))] = sha256_file(path)
    report.files = files
    (out_dir / "manifest.json").write_text(
        json.dumps(
            {
                "study": study,
                "config_sha256": report.config_sha256,
                "seed": report.seed,
                "files": files,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return report


def write_long_csv(path: Path, header: list[str], rows: list[list]) -> None:
    """Plot-ready long-format CSV with repr-exact floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(v) if isinstance(v, float) else v for v in row]
            )


def aggregate_reports(root: Path) -> dict:
    """Collect every report.json under a results root into one summary."""
    root = Path(root)
    summary = {}
    for report_path in sorted(root.rglob("report.json")):
        payload = json.loads(report_path.read_text())
        summary[str(report_path.parent.relative_to(root))] = {
            "study": payload.get("study"),
            "seed": payload.get("seed"),
            "config_sha256": payload.get("config_sha256"),
            "metrics": payload.get("metrics"),
        }
    return summary
