"""
Command-line interface: gen-data, train, eval, ablate, sweep
"""
import argparse
import csv
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import ValidationError

from agents.trainer import ScenTrainer
from config.settings import RunConfig, load_run_config
from core.bundle import DatasetBundle
from core.exceptions import ConfigurationError, NumericalError, OutputExistsError, ScenException
from core.models import AblationRow, DatasetStats, EvalReport, Split, Variant
from networks.scen import ScenParams
from services.bundle_store import load_bundle, save_bundle
from services.checkpoint_store import check_compatible, load_checkpoint
from services.evaluation import evaluate, format_row, write_curve_csv, write_report_json
from services.synthetic import generate_synthetic

LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>"
)
ABLATION_METRICS = ["val_auc", "test_auc", "hm", "seen", "unseen", "state_acc", "object_acc"]
SWEEP_COLUMNS = ["alpha", "beta", "val_auc", "test_auc", "best_hm", "best_seen", "best_unseen"]
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def configure_logging(level: str = "INFO") -> None:
    logger.remove()
    logger.add(sys.stderr, format=LOG_FORMAT, level=level.upper())


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def bundle_paths(config: RunConfig) -> Tuple[Path, Path]:
    return (
        config.metadata_path or config.output_dir / "bundle.meta",
        config.features_path or config.output_dir / "bundle.feat",
    )


def synthetic_bundle(config: RunConfig) -> DatasetBundle:
    return generate_synthetic(
        n_states=config.n_states,
        n_objects=config.n_objects,
        seen_fraction=config.seen_fraction,
        samples_per_pair=config.samples_per_pair,
        feature_dim=config.feature_dim,
        noise_sigma=config.noise_sigma,
        seed=config.data_seed,
        latent_dim=config.latent_dim,
    )


def resolve_bundle(config: RunConfig) -> DatasetBundle:
    """Load the configured bundle files, or regenerate the synthetic dataset"""
    if config.metadata_path and config.features_path:
        return load_bundle(config.metadata_path, config.features_path)
    if config.metadata_path or config.features_path:
        raise ConfigurationError("metadata_path and features_path must be given together")
    logger.info("No bundle paths configured; generating the synthetic dataset")
    return synthetic_bundle(config)


def format_stats(name: str, stats: DatasetStats) -> str:
    """Dataset statistics row: |A| |O| | train SP / i | val SP / UP / i | test SP / UP / i"""
    header = (
        f"{'dataset':<12}{'|A|':>5}{'|O|':>5} | {'SP':>4}{'i':>7} | "
        f"{'SP':>4}{'UP':>4}{'i':>7} | {'SP':>4}{'UP':>4}{'i':>7}"
    )
    row = (
        f"{name:<12}{stats.n_states:>5}{stats.n_objects:>5} | "
        f"{stats.train_seen_pairs:>4}{stats.train_images:>7} | "
        f"{stats.val_seen_pairs:>4}{stats.val_unseen_pairs:>4}{stats.val_images:>7} | "
        f"{stats.test_seen_pairs:>4}{stats.test_unseen_pairs:>4}{stats.test_images:>7}"
    )
    return f"{header}\n{row}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(config: RunConfig) -> DatasetBundle:
    metadata_path, features_path = bundle_paths(config)
    existing = [p for p in (metadata_path, features_path) if p.exists()]
    if existing and not config.force:
        raise OutputExistsError(f"{existing[0]} exists; pass --force to overwrite")
    bundle = synthetic_bundle(config)
    metadata_path.parent.mkdir(parents=True, exist_ok=True)
    features_path.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(bundle, metadata_path, features_path)
    print(format_stats("synthetic", bundle.describe()))
    logger.success(f"Dataset written: {metadata_path}, {features_path}")
    return bundle


def cmd_train(config: RunConfig, bundle: Optional[DatasetBundle] = None) -> ScenTrainer:
    bundle = bundle or resolve_bundle(config)
    trainer = ScenTrainer(bundle, config)
    trainer.fit()
    paths = trainer.save(config.output_dir)
    logger.success(f"Checkpoints written: {paths['best']}, {paths['final']}")
    return trainer


def evaluate_checkpoint(
    scen: ScenParams, bundle: DatasetBundle, split: Split, output_dir: Path
) -> EvalReport:
    check_compatible(scen, bundle)
    report = evaluate(scen, bundle, split)
    output_dir.mkdir(parents=True, exist_ok=True)
    write_curve_csv(report, output_dir / f"curve_{Split(split).value}.csv")
    write_report_json(report, output_dir / f"report_{Split(split).value}.json")
    return report


def cmd_eval(config: RunConfig, bundle: Optional[DatasetBundle] = None) -> EvalReport:
    checkpoint = config.checkpoint or config.output_dir / "best.ckpt"
    bundle = bundle or resolve_bundle(config)
    scen, _ = load_checkpoint(checkpoint)
    report = evaluate_checkpoint(scen, bundle, config.split, config.output_dir)
    print(f"{'':<12}{'AUC':>8}{'HM':>8}{'Seen':>8}{'Unseen':>8}{'s':>8}{'o':>8}")
    print(format_row(config.split.value, report))
    logger.success(f"Evaluated {checkpoint} on {config.split.value}")
    return report


def _train_and_score(config: RunConfig, bundle: DatasetBundle) -> Tuple[EvalReport, EvalReport]:
    trainer = ScenTrainer(bundle, config)
    trainer.fit()
    return evaluate(trainer.best_scen, bundle, Split.VAL), evaluate(trainer.best_scen, bundle, Split.TEST)


def ablation_rows(config: RunConfig, bundle: DatasetBundle) -> List[AblationRow]:
    """Every variant trained with the same seeds; one row per (variant, seed) plus a mean row"""
    rows: List[AblationRow] = []
    seeds = [config.seed + i for i in range(config.n_seeds)]
    for variant in Variant:
        per_seed: List[AblationRow] = []
        for seed in seeds:
            logger.info(f"Ablation: variant={variant.value} seed={seed}")
            val, test = _train_and_score(config.model_copy(update={"variant": variant, "seed": seed}), bundle)
            per_seed.append(
                AblationRow(
                    variant=variant,
                    seed=seed,
                    val_auc=val.auc,
                    test_auc=test.auc,
                    hm=test.best_hm,
                    seen=test.best_seen,
                    unseen=test.best_unseen,
                    state_acc=test.state_acc,
                    object_acc=test.object_acc,
                )
            )
        means = {m: float(np.mean([getattr(r, m) for r in per_seed])) for m in ABLATION_METRICS}
        rows.extend(per_seed)
        rows.append(AblationRow(variant=variant, seed=None, **means))
    return rows


def write_ablation_csv(rows: Sequence[AblationRow], path: Path) -> None:
    """
    One line per variant. A single seed gives the seven metric columns; several seeds
    give `<metric>_seed<k>` columns followed by `<metric>_mean`
    """
    seeds = sorted({r.seed for r in rows if r.seed is not None})
    if len(seeds) == 1:
        header = ["variant"] + ABLATION_METRICS
    else:
        header = ["variant"] + [f"{m}_seed{s}" for s in seeds for m in ABLATION_METRICS]
        header += [f"{m}_mean" for m in ABLATION_METRICS]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for variant in Variant:
            by_seed: Dict[Optional[int], AblationRow] = {r.seed: r for r in rows if r.variant == variant}
            if len(seeds) == 1:
                cells = [getattr(by_seed[seeds[0]], m) for m in ABLATION_METRICS]
            else:
                cells = [getattr(by_seed[s], m) for s in seeds for m in ABLATION_METRICS]
                cells += [getattr(by_seed[None], m) for m in ABLATION_METRICS]
            writer.writerow([variant.value] + [repr(float(c)) for c in cells])


def cmd_ablate(config: RunConfig, bundle: Optional[DatasetBundle] = None) -> List[AblationRow]:
    bundle = bundle or resolve_bundle(config)
    rows = ablation_rows(config, bundle)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    path = config.output_dir / "ablation.csv"
    write_ablation_csv(rows, path)
    print(f"{'':<12}{'Val AUC':>8}{'AUC':>8}{'HM':>8}{'Seen':>8}{'Unseen':>8}{'s':>8}{'o':>8}")
    for row in rows:
        if row.seed is None:
            cells = [getattr(row, m) for m in ABLATION_METRICS]
            print(f"{row.variant.value:<12}" + "".join(f"{100 * c:>8.1f}" for c in cells))
    logger.success(f"Ablation table written: {path}")
    return rows


def cmd_sweep(config: RunConfig, bundle: Optional[DatasetBundle] = None) -> List[Dict[str, float]]:
    """Full variant over alpha_grid x beta_grid with a shared seed"""
    bundle = bundle or resolve_bundle(config)
    results: List[Dict[str, float]] = []
    for alpha in config.alpha_grid:
        for beta in config.beta_grid:
            logger.info(f"Sweep: alpha={alpha} beta={beta}")
            run = config.model_copy(update={"variant": Variant.FULL, "alpha": alpha, "beta": beta})
            val, test = _train_and_score(run, bundle)
            results.append(
                {
                    "alpha": alpha,
                    "beta": beta,
                    "val_auc": val.auc,
                    "test_auc": test.auc,
                    "best_hm": test.best_hm,
                    "best_seen": test.best_seen,
                    "best_unseen": test.best_unseen,
                }
            )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    path = config.output_dir / "sweep.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for result in results:
            writer.writerow([repr(float(result[c])) for c in SWEEP_COLUMNS])
    logger.success(f"Sweep written: {path}")
    return results


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _config_flags() -> argparse.ArgumentParser:
    """One flag per RunConfig field; values stay strings and pydantic validates them"""
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", type=Path, default=None, help="key = value settings file")
    for name, info in RunConfig.model_fields.items():
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        kwargs = dict(dest=name, default=argparse.SUPPRESS, help=info.description or f"default: {info.default}")
        if info.annotation is bool:
            kwargs.update(nargs="?", const="true", metavar="BOOL")
        common.add_argument(*flags, **kwargs)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _config_flags()
    parser = argparse.ArgumentParser(
        prog="scen",
        description="Siamese contrastive embeddings for compositional zero-shot learning",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset bundle")
    sub.add_parser("train", parents=[common], help="train one variant and save checkpoints")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    sub.add_parser("ablate", parents=[common], help="train base, cts, stm and full over several seeds")
    sub.add_parser("sweep", parents=[common], help="train the full variant over the alpha/beta grids")
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments and run one command

    Returns:
        0 on success, 1 on a validation or data error, 2 on a numerical abort
    """
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_file = args.pop("config")
    try:
        config = load_run_config(config_file, **args)
        configure_logging(config.log_level)
        COMMANDS[command](config)
    except NumericalError as e:
        logger.error(f"Training aborted: {e}")
        return EXIT_NUMERICAL
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_INVALID
    except (ScenException, OSError) as e:
        logger.error(f"{command} failed: {e}")
        return EXIT_INVALID
    return EXIT_OK
