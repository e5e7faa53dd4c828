"""Desk-scale benchmark: scripted adversarial agents against system variants."""

from .baselines import (
    MonitorHit,
    PlainLogEntry,
    end_of_episode_review,
    heuristic_monitor_baseline,
    scan_plain_log,
)
from .episode import (
    ABLATION_VARIANTS,
    MAIN_VARIANTS,
    VARIANTS,
    EpisodeResult,
    run_episode,
)
from .metrics import MetricsReport, VScoreConfig, compute_metrics, episode_vscore
from .report import emit_report, load_report, report_to_csv, report_to_json
from .scenarios import (
    DEFAULT_SUITE_SCENARIOS,
    EPISODE_LENGTH,
    SCENARIO_NAMES,
    Scenario,
    build_scenario,
    fixture_baseline,
    fixture_ispec,
    fixture_ispec_document,
)
from .suite import DEFAULT_SEEDS, SuiteConfig, run_suite
