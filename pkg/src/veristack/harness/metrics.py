"""Benchmark metrics: detection time, remediation time, attribution, false
alarms, and the composite verifiability score.

Censoring conventions, stated once: a violating episode with no detection
contributes its remaining horizon (length - violation time) to the
headline T_d mean and is counted in the censored tally; the detected-only
mean is reported alongside. Inside VScore a censored term scores zero, as
if detection or remediation took forever.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .episode import EpisodeResult

T_REF_DEFAULT = 20.0


@dataclass(frozen=True)
class VScoreConfig:
    """VScore = w_ac*AC + w_fpr*(1-FPR) + w_td*exp(-T_d/T_ref) + w_tr*exp(-T_r/T_ref).

    An artifact-defined composite; the weights below are the documented
    defaults, not a published formula.
    """

    w_ac: float = 0.4
    w_fpr: float = 0.2
    w_td: float = 0.2
    w_tr: float = 0.2
    t_ref: float = T_REF_DEFAULT

    def to_dict(self) -> dict:
        return {
            "w_ac": self.w_ac,
            "w_fpr": self.w_fpr,
            "w_td": self.w_td,
            "w_tr": self.w_tr,
            "t_ref": self.t_ref,
        }


def episode_vscore(result: EpisodeResult, config: VScoreConfig = VScoreConfig()) -> float:
    ac = 1.0 if result.attribution_ok else 0.0
    fp_rate = result.false_positives / result.steps if result.steps else 0.0

    if result.violation_time is None:
        d_term = 1.0  # nothing to detect
        r_term = 1.0
    else:
        if result.t_d is not None:
            d_term = math.exp(-result.t_d / config.t_ref)
        else:
            d_term = 0.0  # censored: never detected
        if result.t_d is not None and result.t_r is not None:
            r_term = math.exp(-result.t_r / config.t_ref)
        else:
            r_term = 0.0  # never remediated (or never detected)

    return (
        config.w_ac * ac
        + config.w_fpr * (1.0 - fp_rate)
        + config.w_td * d_term
        + config.w_tr * r_term
    )


def effective_t_d(result: EpisodeResult) -> Optional[float]:
    """Headline detection latency; censored episodes count at the horizon."""
    if result.violation_time is None:
        return None
    if result.t_d is not None:
        return float(result.t_d)
    return float(result.episode_length - result.violation_time)


@dataclass
class VariantMetrics:
    variant: str
    episodes: int = 0
    errored: int = 0
    t_d_mean: Optional[float] = None
    t_d_detected_mean: Optional[float] = None
    t_d_censored: int = 0
    t_r_mean: Optional[float] = None
    t_r_censored: int = 0
    ac: Optional[float] = None
    fpr: Optional[float] = None
    vscore: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "episodes": self.episodes,
            "errored": self.errored,
            "t_d_mean": self.t_d_mean,
            "t_d_detected_mean": self.t_d_detected_mean,
            "t_d_censored": self.t_d_censored,
            "t_r_mean": self.t_r_mean,
            "t_r_censored": self.t_r_censored,
            "ac": self.ac,
            "fpr": self.fpr,
            "vscore": self.vscore,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VariantMetrics":
        return cls(**data)


@dataclass
class MetricsReport:
    variants: list[VariantMetrics]
    episodes: list[EpisodeResult]
    config: dict = field(default_factory=dict)

    def variant(self, name: str) -> VariantMetrics:
        for v in self.variants:
            if v.variant == name:
                return v
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "variants": [v.to_dict() for v in self.variants],
            "episodes": [e.to_dict() for e in self.episodes],
        }


def _mean(values: Sequence[float]) -> Optional[float]:
    values = [v for v in values if v is not None]
    if not values:
        return None
    return sum(values) / len(values)


def compute_metrics(
    results: Sequence[EpisodeResult],
    config: Optional[dict] = None,
    vscore: VScoreConfig = VScoreConfig(),
) -> MetricsReport:
    """Aggregate per-variant means; errored episodes are excluded and counted."""
    if not results:
        raise ValueError("no episode results to aggregate")
    by_variant: dict[str, list[EpisodeResult]] = {}
    for r in results:
        by_variant.setdefault(r.system_variant, []).append(r)

    variants = []
    for name in sorted(by_variant):
        episodes = by_variant[name]
        ok = [e for e in episodes if e.error is None]
        violating = [e for e in ok if e.violation_time is not None]
        detected = [e for e in violating if e.t_d is not None]
        remediated = [e for e in detected if e.t_r is not None]
        compliant = [e for e in ok if e.violation_time is None]

        fpr = None
        if compliant:
            total_steps = sum(e.steps for e in compliant)
            fpr = sum(e.false_positives for e in compliant) / total_steps if total_steps else 0.0

        variants.append(
            VariantMetrics(
                variant=name,
                episodes=len(episodes),
                errored=len(episodes) - len(ok),
                t_d_mean=_mean([effective_t_d(e) for e in violating]),
                t_d_detected_mean=_mean([float(e.t_d) for e in detected]),
                t_d_censored=sum(1 for e in violating if e.t_d_censored),
                t_r_mean=_mean([float(e.t_r) for e in remediated]),
                t_r_censored=sum(1 for e in detected if e.t_r_censored),
                ac=_mean([1.0 if e.attribution_ok else 0.0 for e in ok]),
                fpr=fpr,
                vscore=_mean([episode_vscore(e, vscore) for e in ok]),
            )
        )

    report_config = dict(config or {})
    report_config["vscore"] = vscore.to_dict()
    return MetricsReport(variants=variants, episodes=list(results), config=report_config)
