"""Suite runner: scenario x variant x seed grids with report emission."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .episode import MAIN_VARIANTS, VARIANTS, run_episode
from .metrics import MetricsReport, VScoreConfig, compute_metrics
from .report import emit_report
from .scenarios import DEFAULT_SUITE_SCENARIOS, EPISODE_LENGTH, SCENARIO_NAMES

DEFAULT_SEEDS = tuple(range(10))


@dataclass
class SuiteConfig:
    scenarios: Sequence[str] = DEFAULT_SUITE_SCENARIOS
    variants: Sequence[str] = MAIN_VARIANTS
    seeds: Sequence[int] = DEFAULT_SEEDS
    out_dir: Optional[str | Path] = None
    vscore: VScoreConfig = field(default_factory=VScoreConfig)

    def echo(self) -> dict:
        return {
            "scenarios": list(self.scenarios),
            "variants": list(self.variants),
            "seeds": list(self.seeds),
            "episode_length": EPISODE_LENGTH,
            "episodes": len(self.scenarios) * len(self.variants) * len(self.seeds),
        }


def run_suite(config: SuiteConfig = SuiteConfig()) -> MetricsReport:
    """Run every cell; the same seeds always produce the identical report."""
    for name in config.scenarios:
        if name not in SCENARIO_NAMES:
            raise ValueError(f"unknown scenario {name!r}")
    for variant in config.variants:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
    if not config.seeds:
        raise ValueError("at least one seed required")

    results = []
    for scenario in config.scenarios:
        for variant in config.variants:
            for seed in config.seeds:
                results.append(run_episode(scenario, variant, seed, out_dir=config.out_dir))

    report = compute_metrics(results, config=config.echo(), vscore=config.vscore)
    if config.out_dir is not None:
        emit_report(report, config.out_dir)
    return report
