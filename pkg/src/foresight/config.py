"""Run configuration shared by the harness and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from foresight.acquisition import ConfigurationError, Weights
from foresight.prediction import PredictionConfig

VALID_CONDITIONS = ("reactive", "undirected_idle", "directed_idle")
VALID_BACKENDS = ("oracle", "http")


@dataclass(frozen=True)
class RunConfig:
    scenarios: tuple[str, ...] = ()
    conditions: tuple[str, ...] = VALID_CONDITIONS
    seed: int = 42
    horizon: int = 12
    budget_k: int = 3
    queries_per_search: int = 1
    confidence_threshold: float = 0.6
    value_threshold: float = 60.0
    weights: Weights = field(default_factory=Weights)
    max_predictor_candidates: int = 3
    topic_dedup_threshold: float = 0.85
    near_dup_threshold: float = 0.88
    coverage_threshold: float = 0.80
    memory_gap_confidence: float = 0.70
    gap_staleness_seconds: float = 3600.0
    search_round_cap: int = 4
    backend: str = "oracle"
    endpoint: Optional[str] = None
    parallel: int = 1
    out: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.conditions:
            raise ConfigurationError("at least one condition required")
        for condition in self.conditions:
            if condition not in VALID_CONDITIONS:
                raise ConfigurationError(f"unknown condition {condition!r}")
        if self.backend not in VALID_BACKENDS:
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if self.budget_k < 0:
            raise ConfigurationError(f"budget_k must be >= 0, got {self.budget_k}")
        if self.queries_per_search < 1:
            raise ConfigurationError(f"queries_per_search must be >= 1")
        if self.parallel < 1:
            raise ConfigurationError(f"parallel must be >= 1, got {self.parallel}")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ConfigurationError(f"confidence_threshold out of [0, 1]")
        if not 0.0 <= self.value_threshold <= 100.0:
            raise ConfigurationError(f"value_threshold out of [0, 100]")
        for name in ("topic_dedup_threshold", "near_dup_threshold", "coverage_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} out of [0, 1]: {value}")

    def prediction_config(self) -> PredictionConfig:
        return PredictionConfig(
            confidence_threshold=self.confidence_threshold,
            max_predictor_candidates=self.max_predictor_candidates,
            topic_dedup_threshold=self.topic_dedup_threshold,
            memory_gap_confidence=self.memory_gap_confidence,
            gap_staleness_seconds=self.gap_staleness_seconds,
        )


__all__ = ["RunConfig", "VALID_BACKENDS", "VALID_CONDITIONS"]
