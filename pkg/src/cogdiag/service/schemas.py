"""Pydantic request/response models for the service endpoints."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    learners: int = Field(gt=0)
    items: int = Field(gt=0)
    seed: int = 0
    density: float = Field(default=1.0, gt=0.0, le=1.0)
    out: str
    params_out: Optional[str] = None
    qmatrix_out: Optional[str] = None
    concepts: int = Field(default=8, gt=0)


class SynthResponse(BaseModel):
    out: str
    rows: int
    learners: int
    items: int
    params_out: Optional[str] = None
    qmatrix_out: Optional[str] = None


class GirtBoundsSpec(BaseModel):
    """Proxy intervals and target ability range for the scalar-ability model."""

    proxy_low: float = -1.0
    proxy_high: float = 1.0
    disc_low: float = 0.5
    disc_high: float = 1.0
    ability_low: float = -4.0
    ability_high: float = 4.0


class DimsSpec(BaseModel):
    learner_hidden: int = 256
    item_hidden: int = 256
    head_hidden: int = 128
    agg_dim: int = 32


class SplitSpec(BaseModel):
    kind: Literal["none", "random", "user"] = "none"
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0
    holdout_frac: float = 0.2
    evidence_frac: float = 0.8


class TrainRequest(BaseModel):
    model: Literal["girt", "gncdm", "irt", "ncdm"]
    responses: str
    out: str
    qmatrix: Optional[str] = None
    log_out: Optional[str] = None
    lr: Optional[float] = Field(default=None, gt=0.0)
    epochs: Optional[int] = Field(default=None, ge=0)
    batch_size: int = Field(default=256, gt=0)
    seed: int = 0
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)
    scale: float = Field(default=1.25, gt=0.0)
    bounds: Optional[GirtBoundsSpec] = None
    dims: Optional[DimsSpec] = None
    split: Optional[SplitSpec] = None


class TrainResponse(BaseModel):
    out: str
    model: str
    epochs: int
    train_triplets: int
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    log_out: Optional[str] = None


class ItemScore(BaseModel):
    item_id: str
    score: int = Field(ge=0, le=1)


class DiagnoseRequest(BaseModel):
    model_path: str
    responses: list[ItemScore]
    out: Optional[str] = None


class EvaluateRequest(BaseModel):
    model_path: str
    responses: str
    qmatrix: Optional[str] = None
    split: Literal["random", "user"] = "random"
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    split_seed: int = 0
    holdout_frac: float = 0.2
    evidence_frac: float = 0.8
    threshold: float = 0.5
    ids: bool = False
    augment: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    doc: bool = False
    lr: Optional[float] = Field(default=None, gt=0.0)
    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=256, gt=0)
    out: Optional[str] = None


class BenchRequest(BaseModel):
    model_path: str
    baseline: Literal["irt", "ncdm"]
    responses: str
    qmatrix: Optional[str] = None
    new_learners: int = Field(gt=0)
    lr: Optional[float] = Field(default=None, gt=0.0)
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=256, gt=0)
    seed: int = 0
    repeat: int = Field(default=1, ge=1)
    out: Optional[str] = None
