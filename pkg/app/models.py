from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


# --- configuration ---------------------------------------------------------------

class NetworkConfig(BaseModel):
    """Topology of the two-stage network"""

    base_channels: int = Field(16, ge=1)
    depth: int = Field(3, ge=1)
    input_size: int = Field(64, ge=2)
    aux_loss_weight: float = Field(0.5, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_divisible(self):
        if self.input_size % (2 ** self.depth) != 0:
            raise ValueError(
                f"input_size {self.input_size} is not divisible by 2**depth = {2 ** self.depth}"
            )
        return self


class TrainingConfig(BaseModel):
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(2, ge=1)
    iterations: int = Field(300, ge=0)
    seed: int = 0
    log_every: int = Field(25, ge=1)


class AugmentConfig(BaseModel):
    brightness_range: int = Field(20, ge=0)
    gauss_sigma_max: float = Field(20.0, ge=0)
    uniform_range: float = Field(20.0, ge=0)
    pad_fraction_max: float = Field(0.25, ge=0)
    crop_size: int = Field(64, ge=1)
    seed: int = 0
    brightness: bool = True
    noise: bool = True
    flip: bool = True
    pad_crop: bool = True


class SceneConfig(BaseModel):
    """Recipe for one synthetic OCTA-like scene"""

    size: int = Field(64, ge=8)
    n_seeds: int = Field(3, ge=0)
    branch_prob: float = Field(0.03, ge=0, le=1)
    width_start: List[float] = [2.0, 4.0]
    width_min: float = Field(0.7, gt=0)
    n_nonperfusion: List[int] = [0, 3]
    np_radius_frac: List[float] = [0.10, 0.25]
    speckle_gain: float = Field(0.35, ge=0)
    speckle_gain_np: float = Field(1.0, ge=0)
    background_level: float = Field(60.0, ge=0, le=255)
    mask_threshold: float = Field(40.0, ge=0, le=255)
    seed: int = 0

    @field_validator("width_start", "n_nonperfusion", "np_radius_frac")
    @classmethod
    def _check_range(cls, value):
        if len(value) != 2 or value[0] > value[1] or value[0] < 0:
            raise ValueError(f"expected an ordered non-negative [low, high] pair, got {value}")
        return value

    @model_validator(mode="after")
    def _check_feasible(self):
        if self.np_radius_frac[1] >= 0.5:
            raise ValueError(
                f"non-perfusion radius fraction {self.np_radius_frac[1]} does not fit in the image"
            )
        if self.width_start[0] < self.width_min:
            raise ValueError("width_start must not be below width_min")
        return self


class ThresholdConfig(BaseModel):
    method: Literal["otsu", "local_mean"] = "otsu"
    window: int = 15
    offset: int = 5

    @field_validator("window")
    @classmethod
    def _check_window(cls, value):
        if value < 3 or value % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {value}")
        return value


PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {"lr": 1e-3, "batch_size": 2, "input_size": 64},
    "paper": {"lr": 1e-5, "batch_size": 2, "input_size": 304},
}


class RunConfig(BaseModel):
    """Merged view of every section a command can read"""

    preset: Literal["desk", "paper"] = "desk"
    data_dir: Optional[str] = None
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    render_mode: Literal["exact", "truncated"] = "truncated"
    truncation_k: float = Field(5.0, ge=3)

    @model_validator(mode="after")
    def _check_preset(self):
        pinned = PRESETS[self.preset]
        actual = {
            "lr": self.training.lr,
            "batch_size": self.training.batch_size,
            "input_size": self.network.input_size,
        }
        for key, value in pinned.items():
            if actual[key] != value:
                raise ValueError(f"preset '{self.preset}' pins {key}={value}, got {actual[key]}")
        return self


# --- metrics -----------------------------------------------------------------------

METRIC_NAMES = (
    "accuracy", "precision", "recall", "specificity", "f1",
    "auc", "fdr", "g_means", "kappa",
)


class ConfusionCounts(BaseModel):
    tp: int = Field(0, ge=0)
    tn: int = Field(0, ge=0)
    fp: int = Field(0, ge=0)
    fn: int = Field(0, ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp, tn=self.tn + other.tn,
            fp=self.fp + other.fp, fn=self.fn + other.fn,
        )


class MetricsReport(BaseModel):
    """Nine segmentation metrics; ``None`` marks a value with a zero denominator."""

    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    specificity: Optional[float] = None
    f1: Optional[float] = None
    auc: Optional[float] = None
    fdr: Optional[float] = None
    g_means: Optional[float] = None
    kappa: Optional[float] = None
    pe: Optional[float] = None
    counts: Optional[ConfusionCounts] = None
    undefined: List[str] = []
    images: int = 1


# --- HTTP schemas -------------------------------------------------------------------

class HealthResponse(BaseModel):
    status: str
    version: str
    model_loaded: bool
    parameter_count: Optional[int] = None
