"""
Training orchestrator: alternating discriminator / joint model updates, per-epoch
validation and best-snapshot selection
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from loguru import logger

from agents.history import LOG_COLUMNS, TrainingHistory
from config.settings import RunConfig, settings
from core.autograd import Node, backward, scale, set_deterministic
from core.bundle import DatasetBundle, TrainBatch
from core.exceptions import DatasetError, NumericalError
from core.models import EpochRecord, Split
from core.optim import Adam
from networks.scen import (
    ContrastiveConfig,
    ModelDims,
    ScenParams,
    classification_loss,
    contrastive_from_encoding,
    cts_loss,
    encode_batch,
)
from networks.stm import (
    StmParams,
    StmWeights,
    discriminator_loss,
    generate,
    generator_adversarial_loss,
    reclassification_loss,
    stm_loss,
    total_loss,
)
from services.checkpoint_store import save_checkpoint
from services.databases import CompositionSampler
from services.evaluation import bias_sweep, score_pairs

LOSS_TERMS = LOG_COLUMNS[1:-1]


@dataclass
class StepResult:
    losses: Dict[str, float]
    grad_norms: Dict[str, float] = field(default_factory=dict)


def model_dims(config: RunConfig, bundle: DatasetBundle) -> ModelDims:
    return ModelDims.resolve(
        feature_dim=bundle.feature_dim,
        n_states=bundle.n_states,
        n_objects=bundle.n_objects,
        proto_dim=config.proto_dim,
        embed_dim=config.embed_dim,
        hidden=config.hidden,
        classifier_layers=config.classifier_layers,
    )


class ScenTrainer:
    """
    Owns the parameters, optimizers and sampler of one training run
    Follows the variant lattice: base and cts train SCEN only; stm and full add G and D
    """

    def __init__(self, bundle: DatasetBundle, config: Optional[RunConfig] = None):
        """
        Initialize trainer

        Args:
            bundle: dataset with train and val splits
            config: run settings (defaults to the module singleton)
        """
        self.config = config or settings
        self.bundle = bundle
        self.variant = self.config.variant
        set_deterministic(self.config.deterministic)

        scen_seed, stm_seed, sampler_seed = np.random.SeedSequence(self.config.seed).spawn(3)
        self.dims = model_dims(self.config, bundle)
        self.scen = ScenParams(self.dims, np.random.default_rng(scen_seed))
        self.stm: Optional[StmParams] = None
        if self.variant.uses_stm and self.config.beta > 0:
            self.stm = StmParams(self.dims, np.random.default_rng(stm_seed), hidden=self.config.stm_hidden)
        self.sampler = CompositionSampler(bundle, self.config.k, np.random.default_rng(sampler_seed))

        self.contrastive = ContrastiveConfig(
            tau_s=self.config.tau_s,
            tau_o=self.config.tau_o,
            k=self.config.k,
            normalize=self.config.normalize,
        )
        self.weights = StmWeights(alpha=self.config.alpha, beta=self.config.beta)

        joint = self.scen.parameters()
        if self.stm is not None:
            joint.update(self.stm.g.parameters())
        adam_args = dict(lr=self.config.lr, beta1=self.config.beta1, beta2=self.config.beta2, eps=self.config.eps)
        self.opt = Adam(joint, **adam_args)
        self.opt_d = Adam(self.stm.d.parameters(), **adam_args) if self.stm is not None else None

        self.history = TrainingHistory()
        self.epoch = 0
        self.best_auc = -np.inf
        self.selects_best = True
        self.best_scen: ScenParams = self.scen.snapshot()
        self.best_stm: Optional[StmParams] = self.stm.snapshot() if self.stm is not None else None

        logger.info(
            f"Trainer initialized (variant={self.variant.value}, stm={'on' if self.stm else 'off'}, "
            f"dims={self.dims})"
        )

    def _check(self, term: str, node: Node) -> float:
        value = node.item()
        if not np.isfinite(value):
            logger.error(f"{term} is {value} at epoch {self.epoch}")
            raise NumericalError(term, value, self.epoch)
        return value

    @staticmethod
    def _grad_norms(opt: Adam) -> Dict[str, float]:
        return {name: float(np.max(np.abs(p.grad))) for name, p in opt.params.items()}

    def train_step(self, batch: TrainBatch) -> StepResult:
        """
        One D update (when STM is active) followed by one joint update

        Args:
            batch: rows drawn by the sampler

        Returns:
            Loss values (absent terms 0) and the max-abs gradient of every tensor
        """
        features = self.bundle.features
        losses = {term: 0.0 for term in LOSS_TERMS}
        grad_norms: Dict[str, float] = {}
        self.opt.zero_grad()

        enc = encode_batch(
            self.scen,
            batch,
            features,
            contrastive=self.variant.uses_contrastive,
            transitions=self.stm is not None,
        )
        labels = (self.bundle.state_ids[batch.classified], self.bundle.object_ids[batch.classified])
        l_cls = classification_loss(self.scen, enc.h_s, enc.h_o, labels)
        losses["L_cls"] = self._check("L_cls", l_cls)
        objective = l_cls
        if self.variant.uses_contrastive:
            l_scl, l_ocl = contrastive_from_encoding(enc, self.contrastive)
            losses["L_scl"] = self._check("L_scl", l_scl)
            losses["L_ocl"] = self._check("L_ocl", l_ocl)
            objective = cts_loss(l_scl, l_ocl, l_cls)

        if self.stm is None:
            loss = scale(objective, self.weights.alpha)
        else:
            x_hat = generate(self.stm, enc.transition_s, enc.anchor_o)
            self.opt_d.zero_grad()
            l_d = discriminator_loss(self.stm, features[batch.anchors], x_hat)
            losses["L_D"] = self._check("L_D", l_d)
            backward(l_d)
            grad_norms.update(self._grad_norms(self.opt_d))
            self.opt_d.step()
            self.opt_d.zero_grad()

            l_g_adv = generator_adversarial_loss(self.stm, x_hat, self.config.gan_mode)
            l_cls_re = reclassification_loss(self.scen, self.stm, batch, self.bundle, x_hat=x_hat)
            losses["L_G_adv"] = self._check("L_G_adv", l_g_adv)
            losses["L_cls_re"] = self._check("L_cls_re", l_cls_re)
            loss = total_loss(objective, stm_loss(l_g_adv, l_cls_re), self.weights)

        self._check("L_total", loss)
        backward(loss)
        grad_norms.update(self._grad_norms(self.opt))
        self.opt.step()
        self.opt.zero_grad()
        return StepResult(losses=losses, grad_norms=grad_norms)

    def validation_auc(self) -> float:
        """AUC on the val split; 0 when val lacks seen or unseen truth"""
        try:
            return bias_sweep(score_pairs(self.scen, self.bundle, Split.VAL)).auc
        except DatasetError as e:
            if self.selects_best:
                logger.warning(f"Validation AUC unavailable, best-snapshot selection disabled: {e}")
            self.selects_best = False
            return 0.0

    def run_epoch(self) -> EpochRecord:
        self.epoch += 1
        sums = {term: 0.0 for term in LOSS_TERMS}
        n_batches = 0
        for batch in self.sampler.epoch(self.config.batch_size):
            result = self.train_step(batch)
            for term, value in result.losses.items():
                sums[term] += value
            n_batches += 1
        means = {term: total / n_batches for term, total in sums.items()}
        record = EpochRecord(epoch=self.epoch, val_auc=self.validation_auc(), **means)
        self.history.add_epoch(record)
        logger.info(
            f"epoch {record.epoch}: L_cls={record.L_cls:.4f} L_scl={record.L_scl:.4f} "
            f"L_ocl={record.L_ocl:.4f} L_D={record.L_D:.4f} L_G_adv={record.L_G_adv:.4f} "
            f"L_cls_re={record.L_cls_re:.4f} val_auc={record.val_auc:.4f}"
        )
        return record

    def _keep_if_best(self, auc: float) -> None:
        if auc > self.best_auc:
            self.best_auc = auc
            self.best_scen = self.scen.snapshot()
            self.best_stm = self.stm.snapshot() if self.stm is not None else None

    def fit(self, epochs: Optional[int] = None) -> TrainingHistory:
        """
        Train for a number of epochs, keeping the best-val-AUC snapshot

        Args:
            epochs: overrides config.epochs

        Returns:
            The run's TrainingHistory
        """
        epochs = self.config.epochs if epochs is None else epochs
        if self.epoch == 0:
            self._keep_if_best(self.validation_auc())
        for _ in range(epochs):
            record = self.run_epoch()
            self._keep_if_best(record.val_auc)
        if not self.selects_best:
            logger.warning("No validation AUC was available; best.ckpt holds the final weights")
            self.best_scen = self.scen.snapshot()
            self.best_stm = self.stm.snapshot() if self.stm is not None else None
        logger.success(f"Training finished. {self.history.get_summary()}")
        return self.history

    def save(self, output_dir: Path) -> Dict[str, Path]:
        """Write best.ckpt, final.ckpt and train_log.csv"""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "best": output_dir / "best.ckpt",
            "final": output_dir / "final.ckpt",
            "log": output_dir / "train_log.csv",
        }
        save_checkpoint(paths["best"], self.best_scen, self.best_stm)
        save_checkpoint(paths["final"], self.scen, self.stm)
        self.history.write_csv(paths["log"])
        return paths
