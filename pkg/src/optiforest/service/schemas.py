"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from ..forest import ForestConfig
from ..theory import BranchingDistribution


class DistributionSpec(BaseModel):
    """Branching factor law; ``v0`` only applies to the fixed kind."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["finite23", "geometric", "factorial", "fixed"] = "finite23"
    v0: Optional[int] = Field(default=None, ge=2)

    def to_distribution(self) -> BranchingDistribution:
        return BranchingDistribution(self.kind, self.v0)

    @classmethod
    def from_distribution(cls, dist: BranchingDistribution) -> "DistributionSpec":
        return cls(kind=dist.kind, v0=dist.v0)


class ForestParams(BaseModel):
    """Fitting parameters, mirroring the library configuration."""

    model_config = ConfigDict(extra="forbid")

    trees: int = Field(default=100, ge=1)
    sample_size: int = Field(default=512, ge=2)
    epsilon: Union[int, Literal["auto"]] = "auto"
    distribution: DistributionSpec = Field(default_factory=DistributionSpec)
    seed: int = Field(default=0, ge=0)
    mode: Literal["optiforest", "lsh-only"] = "optiforest"

    def to_config(self) -> ForestConfig:
        return ForestConfig(
            trees=self.trees,
            sample_size=self.sample_size,
            epsilon=self.epsilon,
            distribution=self.distribution.to_distribution(),
            seed=self.seed,
            mode=self.mode,
        )

    @classmethod
    def from_config(cls, config: ForestConfig) -> "ForestParams":
        return cls(
            trees=config.trees,
            sample_size=config.sample_size,
            epsilon=config.epsilon,
            distribution=DistributionSpec.from_distribution(config.distribution),
            seed=config.seed,
            mode=config.mode,
        )


class FitRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rows: list[list[float]] = Field(min_length=2)
    params: ForestParams = Field(default_factory=ForestParams)
    jobs: int = Field(default=1, ge=1)


class FitResponse(BaseModel):
    model_id: str
    tree_count: int
    n_features: int
    psi_effective: int
    epsilon_used: int


class ModelInfo(BaseModel):
    model_id: str
    params: ForestParams
    tree_count: int
    n_features: int
    psi_effective: int
    epsilon_used: int


class ScoreRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rows: list[list[float]] = Field(min_length=1)


class ScoreResponse(BaseModel):
    model_id: str
    scores: list[float]


class MetricStats(BaseModel):
    mean: float
    std: float
    runs: list[float]


class EvaluateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rows: list[list[float]] = Field(min_length=2)
    labels: list[int] = Field(min_length=2)
    params: ForestParams = Field(default_factory=ForestParams)
    repeats: int = Field(default=15, ge=1)
    jobs: int = Field(default=1, ge=1)


class EvaluateResponse(BaseModel):
    auc_roc: MetricStats
    auc_pr: MetricStats
    runtime_s: float
    config: dict


class CurvePoint(BaseModel):
    v: float
    efficiency: float


class CurveResponse(BaseModel):
    area: float
    points: list[CurvePoint]


class HealthResponse(BaseModel):
    status: Literal["ok"]
