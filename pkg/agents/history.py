import csv
from pathlib import Path
from typing import List, Optional

from loguru import logger

from core.models import EpochRecord

LOG_COLUMNS = ["epoch", "L_cls", "L_scl", "L_ocl", "L_D", "L_G_adv", "L_cls_re", "val_auc"]


class TrainingHistory:
    """Per-epoch loss means and validation AUC for one run"""

    def __init__(self):
        self.epochs: List[EpochRecord] = []
        logger.debug("Training history initialized")

    def add_epoch(self, record: EpochRecord) -> None:
        """
        Append one epoch

        Args:
            record: loss means and validation AUC; epochs must arrive in order
        """
        if self.epochs and record.epoch <= self.epochs[-1].epoch:
            raise ValueError(f"epoch {record.epoch} recorded after epoch {self.epochs[-1].epoch}")
        self.epochs.append(record)
        logger.debug(f"Recorded epoch {record.epoch}. Total epochs: {len(self.epochs)}")

    def records(self) -> List[EpochRecord]:
        return list(self.epochs)

    def best(self) -> Optional[EpochRecord]:
        """Earliest epoch with the highest validation AUC"""
        if not self.epochs:
            return None
        return max(self.epochs, key=lambda r: (r.val_auc, -r.epoch))

    def write_csv(self, path: Path) -> None:
        """Training log; floats use repr so reruns compare byte-for-byte"""
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for record in self.epochs:
                row = record.model_dump()
                writer.writerow([record.epoch] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])
        logger.info(f"Training log written: {path}")

    def get_summary(self) -> str:
        if not self.epochs:
            return "No epochs recorded"
        best = self.best()
        last = self.epochs[-1]
        return (
            f"Epochs: {len(self.epochs)}, final L_cls: {last.L_cls:.4f}, "
            f"best val AUC: {best.val_auc:.4f} (epoch {best.epoch})"
        )
