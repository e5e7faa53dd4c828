"""Report emission: a variant-per-row CSV and a full-detail JSON file.

Field order and float formatting are fixed so two runs with the same seeds
produce byte-identical output.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .episode import DetectedEvent, EpisodeResult
from .metrics import MetricsReport, VariantMetrics

CSV_COLUMNS = ("variant", "mean_t_d", "mean_t_r", "ac", "fpr", "vscore")

# Table layout: baselines first, then the full stack, then ablations.
VARIANT_ORDER = (
    "no_verifier",
    "heuristic_monitor",
    "vfa_full",
    "vfa_minus_audit",
    "vfa_minus_attestation",
    "vfa_minus_cra",
)


def _cell(value, none_word: str = "censored", digits: int = 4) -> str:
    if value is None:
        return none_word
    return f"{value:.{digits}f}"


def report_to_csv(report: MetricsReport) -> str:
    ordered = sorted(
        report.variants,
        key=lambda v: VARIANT_ORDER.index(v.variant) if v.variant in VARIANT_ORDER else 99,
    )
    lines = [",".join(CSV_COLUMNS)]
    for v in ordered:
        lines.append(
            ",".join(
                (
                    v.variant,
                    _cell(v.t_d_mean),
                    _cell(v.t_r_mean),
                    _cell(v.ac, "n/a"),
                    _cell(v.fpr, "n/a"),  # needs compliant episodes to measure
                    _cell(v.vscore, "n/a"),
                )
            )
        )
    return "\n".join(lines) + "\n"


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def emit_report(report: MetricsReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.csv and report.json under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    json_path = out / "report.json"
    csv_path.write_text(report_to_csv(report), encoding="utf-8")
    json_path.write_text(report_to_json(report), encoding="utf-8")
    return {"csv": csv_path, "json": json_path}


def load_report(path: str | Path) -> MetricsReport:
    """Inverse of report_to_json: reload a report for comparison or reuse."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    episodes = []
    for e in data["episodes"]:
        episodes.append(
            EpisodeResult(
                scenario=e["scenario"],
                system_variant=e["system_variant"],
                seed=e["seed"],
                episode_length=e["episode_length"],
                steps=e["steps"],
                ground_truth_events=[tuple(x) for x in e["ground_truth_events"]],
                detected_events=[DetectedEvent(*x) for x in e["detected_events"]],
                violation_time=e["violation_time"],
                detection_time=e["detection_time"],
                t_d=e["t_d"],
                t_d_censored=e["t_d_censored"],
                t_r=e["t_r"],
                t_r_censored=e["t_r_censored"],
                attribution_ok=e["attribution_ok"],
                false_positives=e["false_positives"],
                bypass_attempts=e.get("bypass_attempts", 0),
                bypass_blocked=e.get("bypass_blocked", 0),
                chain_file=e["chain_file"],
                error=e["error"],
            )
        )
    variants = [VariantMetrics.from_dict(v) for v in data["variants"]]
    return MetricsReport(variants=variants, episodes=episodes, config=data["config"])
