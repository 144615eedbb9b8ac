"""Pydantic models: hyperparameter samples, discard records and per-command run configs."""

from typing import ClassVar, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PREPROCESSING_CHOICES = ("R", "X", "C", "RX", "RC")
BATCH_CHOICES = (1024, 2048)
N_ENS_CHOICES = (1, 2, 4, 8, 12, 16, 20)
DROPOUT_CHOICES = (0.0, 0.15)
FINETUNE_STEP_CHOICES = (4, 512, 1024)
GBDT_ESTIMATOR_CHOICES = (100, 300)
DEDUPE_KEYWORDS = ("small", "medium", "processed", "classif", "regression", "version")


# --- Hyperparameters ---

class HpSample(BaseModel):
    """One draw from the hyperparameter search space; defaults are the default column."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Subclasses used for ad-hoc runs may step outside the categorical domains.
    restrict_domains: ClassVar[bool] = True

    # General
    preprocessing: Literal["R", "X", "C", "RX", "RC"] = "RX"
    batch_size: int = 2048
    n_ens: int = Field(default=8, ge=1)
    feature_bagging: bool = True

    # Fine-tuning
    do_finetune: bool = True
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    finetune_steps: int = Field(default=1024, ge=0)
    finetune_lr: float = Field(default=1e-4, ge=0.0, le=1e-2)
    finetune_data: Literal["bootstrap", "entire"] = "entire"

    # GBDT embedding
    gbdt_data_split: Literal["dynamic", "entire"] = "dynamic"
    gbdt_per_predictor: bool = False
    gbdt_estimators: int = Field(default=100, ge=1)
    gbdt_lr: Optional[float] = Field(default=None, ge=0.01, le=0.5)

    # Retrieval
    do_retrieval: bool = True
    tau: float = Field(default=2.0, ge=0.5, le=3.0)
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_domains(self):
        if not self.restrict_domains:
            return self
        checks = {
            "batch_size": (self.batch_size, BATCH_CHOICES),
            "n_ens": (self.n_ens, N_ENS_CHOICES),
            "dropout": (self.dropout, DROPOUT_CHOICES),
            "finetune_steps": (self.finetune_steps, FINETUNE_STEP_CHOICES),
            "gbdt_estimators": (self.gbdt_estimators, GBDT_ESTIMATOR_CHOICES),
        }
        for name, (value, domain) in checks.items():
            if value not in domain:
                raise ValueError(f"{name}={value} is outside {domain}")
        if self.finetune_lr < 1e-6:
            raise ValueError(f"finetune_lr={self.finetune_lr} is outside [1e-6, 1e-2]")
        return self


class InferenceOptions(HpSample):
    """HpSample plus knobs outside the search space; categorical domains are not enforced."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    restrict_domains: ClassVar[bool] = False

    init: Literal["hypernetwork", "random"] = "hypernetwork"
    feature_fraction: float = Field(default=0.8, gt=0.0, le=1.0)
    context_cap: int = Field(default=10_000, ge=1)
    finetune_patience: int = Field(default=16, ge=1)
    holdout_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    regression_retrieval: bool = False
    seed: int = 0

    @property
    def retrieval_alpha(self) -> float:
        return self.alpha if self.do_retrieval else 0.0


# --- Dedupe ---

class DedupeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    threshold: float = Field(default=0.8, ge=0.0, le=1.0)
    leak_samples: int = Field(default=5, ge=1)
    keywords: List[str] = list(DEDUPE_KEYWORDS)
    min_features: int = 2
    min_rows: int = 10
    max_features: int = 100_000
    max_rows: int = 1_000_000
    seed: int = 0


class DiscardRecord(BaseModel):
    """Verdict for one candidate dataset."""
    model_config = ConfigDict(frozen=True)

    name: str
    verdict: Literal["keep", "discard"]
    rule: Optional[str] = None
    evidence: str = ""


# --- Run configs (one per command) ---

class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: str = "runs/latest"
    seed: int = 0


class MetaTrainRunConfig(RunConfig):
    tasks_dir: str
    val_dir: Optional[str] = None
    n_val_tasks: int = Field(default=8, ge=1)
    build_cache: bool = False

    # Algorithm knobs
    accumulation: int = Field(default=40, ge=1)
    lr: float = Field(default=1e-4, ge=0.0)
    optimizer: Literal["adam", "sgd"] = "adam"
    max_steps: int = Field(default=1000, ge=1)
    batch_gen: int = Field(default=2048, ge=1)
    batch_grad: int = Field(default=2048, ge=1)
    val_period: int = Field(default=100, ge=1)
    retrieval: bool = True
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)
    tau: float = Field(default=2.0, gt=0.0)
    dtype: Literal["float64", "float32"] = "float64"

    # Dimensions
    d_main: int = Field(default=512, ge=1)
    hidden: int = Field(default=1024, ge=1)
    k_max: int = Field(default=16, ge=1)
    block_depth: int = Field(default=2, ge=1)
    random_features: int = Field(default=32768, ge=1)

    # Embedding stage
    preprocessing: Literal["R", "X", "C", "RX", "RC"] = "RX"
    gbdt_estimators: int = Field(default=100, ge=1)
    gbdt_lr: Optional[float] = None
    gbdt_data_split: Literal["dynamic", "entire"] = "dynamic"

    # Optional time budget in seconds
    time_budget: Optional[float] = None


class FitPredictRunConfig(RunConfig, InferenceOptions):
    model_config = ConfigDict(extra="forbid", frozen=False)

    checkpoint: Optional[str] = None
    tasks_dir: str
    task: str
    dump_weights: bool = False
    # Used when no checkpoint is given (init=random) or to override its echo
    d_main: Optional[int] = Field(default=None, ge=1)
    random_features: Optional[int] = Field(default=None, ge=1)


class EvaluateRunConfig(RunConfig):
    checkpoint: Optional[str] = None
    tasks_dir: str
    suite: Literal["default", "ablation", "init", "hpo"] = "default"
    seeds: List[int] = [0]
    n_hpo: int = Field(default=29, ge=0)
    n_ens: Optional[int] = None
    finetune_steps: Optional[int] = None
    time_budget: Optional[float] = None
    d_main: Optional[int] = Field(default=None, ge=1)
    random_features: Optional[int] = Field(default=None, ge=1)

    @field_validator("seeds", mode="before")
    @classmethod
    def _split_seeds(cls, v):
        if isinstance(v, str):
            return [int(s) for s in v.split(",") if s.strip()]
        return v


class DedupeRunConfig(RunConfig):
    candidates_dir: str
    evals_dir: str
    eval_list: Optional[str] = None
    threshold: float = Field(default=0.8, ge=0.0, le=1.0)
    leak_samples: int = Field(default=5, ge=1)

    def dedupe_config(self) -> DedupeConfig:
        return DedupeConfig(threshold=self.threshold, leak_samples=self.leak_samples, seed=self.seed)


class GradcheckRunConfig(RunConfig):
    d_main: int = 8
    hidden: int = 16
    k_max: int = 4
    n_classes: int = 3
    n_gen: int = 12
    n_grad: int = 10
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)
    tau: float = Field(default=2.0, gt=0.0)
    tolerance: float = 1e-5
    mutation: Optional[Literal["relu_mask"]] = None


class HpoSampleRunConfig(RunConfig):
    n_samples: int = Field(default=30, ge=1)


class BuildCacheRunConfig(RunConfig):
    tasks_dir: str
    preprocessing: Literal["R", "X", "C", "RX", "RC"] = "RX"
    gbdt_estimators: int = Field(default=100, ge=1)
    gbdt_lr: Optional[float] = None
    gbdt_data_split: Literal["dynamic", "entire"] = "dynamic"


class SynthRunConfig(RunConfig):
    kind: Literal["classification", "regression"] = "classification"
    n_tasks: int = Field(default=32, ge=1)
    prefix: Optional[str] = None


class HistoryRunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    limit: int = Field(default=20, ge=1)
    hours: int = Field(default=24, ge=1)
