from typing import List, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field
from enum import Enum


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class Variant(str, Enum):
    BASE = "base"
    CTS = "cts"
    STM = "stm"
    FULL = "full"

    @property
    def uses_contrastive(self) -> bool:
        return self in (Variant.CTS, Variant.FULL)

    @property
    def uses_stm(self) -> bool:
        return self in (Variant.STM, Variant.FULL)


class GanMode(str, Enum):
    SATURATING = "saturating"
    NON_SATURATING = "non-saturating"


class CompositionLabel(BaseModel):
    """A (state, object) pair; ordering follows (state_id, object_id)"""
    model_config = ConfigDict(frozen=True)

    state_id: int = Field(ge=0)
    object_id: int = Field(ge=0)

    @property
    def key(self) -> Tuple[int, int]:
        return (self.state_id, self.object_id)

    def __lt__(self, other: "CompositionLabel") -> bool:
        return self.key < other.key


class CurvePoint(BaseModel):
    seen_acc: float
    unseen_acc: float
    bias: float


class EvalReport(BaseModel):
    auc: float = Field(ge=0.0, le=1.0)
    best_hm: float = Field(ge=0.0, le=1.0)
    best_seen: float = Field(ge=0.0, le=1.0)
    best_unseen: float = Field(ge=0.0, le=1.0)
    state_acc: float = Field(default=0.0, ge=0.0, le=1.0)
    object_acc: float = Field(default=0.0, ge=0.0, le=1.0)
    curve: List[CurvePoint] = Field(default_factory=list)

    def scalars(self) -> dict:
        return self.model_dump(exclude={"curve"})


class EpochRecord(BaseModel):
    epoch: int
    L_cls: float = 0.0
    L_scl: float = 0.0
    L_ocl: float = 0.0
    L_D: float = 0.0
    L_G_adv: float = 0.0
    L_cls_re: float = 0.0
    val_auc: float = 0.0


class AblationRow(BaseModel):
    variant: Variant
    seed: Optional[int] = None  # None marks the mean row
    val_auc: float
    test_auc: float
    hm: float
    seen: float
    unseen: float
    state_acc: float
    object_acc: float


class DatasetStats(BaseModel):
    n_states: int
    n_objects: int
    train_seen_pairs: int
    train_images: int
    val_seen_pairs: int
    val_unseen_pairs: int
    val_images: int
    test_seen_pairs: int
    test_unseen_pairs: int
    test_images: int
