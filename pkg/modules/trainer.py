import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import torch
import torch.nn as nn

from .data_pipeline import (
    POOL_STREAM,
    SCHEDULE_STREAM,
    ScheduleDataset,
    build_epoch_schedule,
    derive_seed,
    make_loader,
)
from .errors import InvalidInputError, NonFiniteLossError
from .image_pool import ImagePool
from .losses import (
    LossReport,
    cycle_loss,
    identity_loss,
    paired_l1_loss,
    relativistic_d_loss,
    relativistic_g_loss,
    total_generator_loss,
)
from .manifest import DatasetManifest
from .networks import (
    ModelState,
    build_model_state,
    model_state_from_payload,
    read_checkpoint,
    save_model_state,
)
from .selection import SelectionResult
from .settings_manager import LossWeights, TrainingConfig

TRAIN_LOG_FIELDS: List[str] = [
    "step", "epoch", "kind", "gan_g", "gan_d", "cycle", "identity", "l1_paired", "total",
    "lr", "lambda1", "lambda2", "lambda3", "lambda4",
]
EPOCH_LOG_FIELDS: List[str] = [
    "epoch", "lr", "steps", "paired_steps", "gan_g", "gan_d", "cycle", "identity", "l1_paired", "total",
]


def lr_at_epoch(epoch: int, epochs_total: int, lr_base: float) -> float:
    """Constant for the first half of training, then linear decay reaching 0 at epochs_total."""
    if epochs_total <= 0 or not 0 <= epoch <= epochs_total:
        raise InvalidInputError(f"epoch {epoch} outside [0, {epochs_total}]")
    half = epochs_total / 2
    if epoch < half:
        return lr_base
    return lr_base * ((epochs_total - epoch) / half)


def set_requires_grad(nets: Iterable[nn.Module], flag: bool) -> None:
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


@dataclass
class TrainState:
    models: ModelState
    opt_g: torch.optim.Optimizer
    opt_d_x: torch.optim.Optimizer
    opt_d_y: torch.optim.Optimizer
    pool_x: ImagePool  # fakes in domain X, from G_YX
    pool_y: ImagePool  # fakes in domain Y, from G_XY
    epoch: int = 0
    position: int = 0  # next schedule entry within the epoch
    step: int = 0
    epochs_total: int = 2

    def optimizers(self) -> Dict[str, torch.optim.Optimizer]:
        return {"opt_g": self.opt_g, "opt_d_x": self.opt_d_x, "opt_d_y": self.opt_d_y}

    def set_lr(self, lr: float) -> None:
        for opt in self.optimizers().values():
            for group in opt.param_groups:
                group["lr"] = lr


def build_train_state(config: TrainingConfig, epochs_total: int, device: str = "cpu") -> TrainState:
    models = build_model_state(config.generator, config.discriminator, config.seed).to(device)
    adam = dict(lr=config.lr_base, betas=tuple(config.betas), eps=config.eps)
    return TrainState(
        models=models,
        opt_g=torch.optim.Adam(models.generator_parameters(), **adam),
        opt_d_x=torch.optim.Adam(models.d_x.parameters(), **adam),
        opt_d_y=torch.optim.Adam(models.d_y.parameters(), **adam),
        pool_x=ImagePool(config.pool_capacity, derive_seed(config.seed, POOL_STREAM, 0)),
        pool_y=ImagePool(config.pool_capacity, derive_seed(config.seed, POOL_STREAM, 1)),
        epochs_total=epochs_total,
    )


def _batch_flag(value: Any) -> bool:
    if isinstance(value, torch.Tensor):
        return bool(value.reshape(-1)[0].item())
    if isinstance(value, (list, tuple)):
        return bool(value[0])
    return bool(value)


def _raise_if_non_finite(step: int, parts: Dict[str, torch.Tensor]) -> None:
    values = {k: float(v.detach()) for k, v in parts.items()}
    if not all(math.isfinite(v) for v in values.values()):
        logging.error(f"Non-finite loss at step {step}: {values}")
        raise NonFiniteLossError(step, values)


def train_step(
    state: TrainState,
    batch: Dict[str, Any],
    weights: LossWeights,
    identity_on_paired: bool = True,
) -> Tuple[TrainState, LossReport]:
    """
    One hybrid iteration: joint generator update on the weighted objective (the paired
    L1 term only on paired batches), then D_X, then D_Y on pool-supplied fakes.
    """
    m = state.models
    device = next(m.g_xy.parameters()).device
    x = batch["x"].to(device)
    y = batch["y"].to(device)
    is_paired = _batch_flag(batch["paired"])
    if not identity_on_paired and is_paired:
        weights = weights.model_copy(update={"lambda3": 0.0})

    # generators
    set_requires_grad([m.d_x, m.d_y], False)
    fake_y = m.g_xy(x)
    fake_x = m.g_yx(y)
    rec_x = m.g_yx(fake_y)
    rec_y = m.g_xy(fake_x)
    gan_g = relativistic_g_loss(m.d_y(y), m.d_y(fake_y)) + relativistic_g_loss(m.d_x(x), m.d_x(fake_x))
    cyc = cycle_loss(x, rec_x, y, rec_y)
    idt = identity_loss(x, m.g_yx(x), y, m.g_xy(y))
    l1 = paired_l1_loss(fake_y, y, fake_x, x) if is_paired else torch.zeros((), device=device)
    parts = {"gan_g": gan_g, "cycle": cyc, "identity": idt, "l1_paired": l1}
    total = total_generator_loss(parts, weights, is_paired)
    _raise_if_non_finite(state.step, {**parts, "total": total})

    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()

    # discriminators, fed through the history pools
    set_requires_grad([m.d_x, m.d_y], True)
    pooled_x = state.pool_x.query(fake_x.detach())
    d_x_loss = relativistic_d_loss(m.d_x(x), m.d_x(pooled_x))
    _raise_if_non_finite(state.step, {"gan_d_x": d_x_loss})
    state.opt_d_x.zero_grad(set_to_none=True)
    d_x_loss.backward()
    state.opt_d_x.step()

    pooled_y = state.pool_y.query(fake_y.detach())
    d_y_loss = relativistic_d_loss(m.d_y(y), m.d_y(pooled_y))
    _raise_if_non_finite(state.step, {"gan_d_y": d_y_loss})
    state.opt_d_y.zero_grad(set_to_none=True)
    d_y_loss.backward()
    state.opt_d_y.step()

    report = LossReport(
        gan_g=float(gan_g.detach()),
        gan_d=float(d_x_loss.detach()) + float(d_y_loss.detach()),
        cycle=float(cyc.detach()),
        identity=float(idt.detach()),
        l1_paired=float(l1.detach()),
        total=float(total.detach()),
        is_paired=is_paired,
    )
    state.step += 1
    state.position += 1
    m.step = state.step
    return state, report


@dataclass
class TrainResult:
    history: List[LossReport] = field(default_factory=list)
    epochs_total: int = 0
    final_checkpoint: Optional[Path] = None
    latest_checkpoint: Optional[Path] = None
    stopped_early: bool = False


class Trainer:
    """
    Owns the training state of one run and drives epochs over the balanced schedule,
    writing CSV logs and checkpoints into out_dir.
    """

    def __init__(
        self,
        config: TrainingConfig,
        manifest: DatasetManifest,
        out_dir: Union[str, Path],
        selection: Optional[SelectionResult] = None,
        run_info: Optional[Dict[str, Any]] = None,
        unpaired_selection: Optional[SelectionResult] = None,
    ) -> None:
        self.config = config
        self.out_dir = Path(out_dir)
        self.device = config.resolve_device()
        if config.deterministic:
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True, warn_only=True)

        # restrict first so pairs demoted by the selection stay in the unpaired streams
        if unpaired_selection is not None:
            if unpaired_selection.pool != "unpaired":
                raise InvalidInputError("unpaired_selection must pick unpaired X images")
            manifest = manifest.restrict_unpaired_x(unpaired_selection.selected_ids)
        if selection is not None:
            if selection.pool != "paired":
                raise InvalidInputError("selection must pick paired samples")
            manifest = manifest.with_selection(selection.selected_ids)

        manifest.validate_files()
        self.manifest = manifest

        first = build_epoch_schedule(manifest, config.seed, config.balanced)
        self.schedule_length = len(first)
        epochs_total = config.resolve_epochs(self.schedule_length)
        self.state = build_train_state(config, epochs_total, self.device)
        self.weights = config.effective_weights()
        self.run_info: Dict[str, Any] = {
            "n_paired": manifest.n_paired,
            "n_unpaired": manifest.n_unpaired,
            "strategy": selection.strategy if selection else "none",
            "budget": selection.budget if selection else None,
            "selected_ids": list(selection.selected_ids) if selection else None,
            "unpaired_strategy": unpaired_selection.strategy if unpaired_selection else None,
            "n_unpaired_x": len(manifest.unpaired_x),
            "seed": config.seed,
        }
        if run_info:
            self.run_info.update(run_info)
        logging.info(
            f"Trainer ready: {manifest.n_paired} paired, {manifest.n_unpaired} unpaired, "
            f"{self.schedule_length} iterations/epoch, {epochs_total} epochs, device {self.device}."
        )

    # --- checkpoints ---
    def save(self, path: Union[str, Path]) -> Path:
        s = self.state
        s.models.epoch = s.epoch
        s.models.step = s.step
        extra = {
            "training_config": self.config.model_dump(mode="json"),
            "optimizers": {name: opt.state_dict() for name, opt in s.optimizers().items()},
            "pools": {"pool_x": s.pool_x.state_dict(), "pool_y": s.pool_y.state_dict()},
            "position": s.position,
            "epochs_total": s.epochs_total,
            "run_info": self.run_info,
            "torch_rng": torch.get_rng_state(),
        }
        save_model_state(s.models, path, extra=extra)
        return Path(path)

    @classmethod
    def resume(
        cls,
        checkpoint: Union[str, Path],
        manifest: DatasetManifest,
        out_dir: Union[str, Path],
        selection: Optional[SelectionResult] = None,
        overrides: Optional[Dict[str, Any]] = None,
        unpaired_selection: Optional[SelectionResult] = None,
    ) -> "Trainer":
        payload = read_checkpoint(checkpoint)
        if "training_config" not in payload:
            raise InvalidInputError(f"'{checkpoint}' holds no training state to resume from")
        config_data = {**payload["training_config"], **(overrides or {})}
        config = TrainingConfig.model_validate(config_data)
        trainer = cls(
            config,
            manifest,
            out_dir,
            selection=selection,
            run_info=payload.get("run_info"),
            unpaired_selection=unpaired_selection,
        )
        s = trainer.state
        s.models = model_state_from_payload(payload, trainer.device)
        models = s.models
        adam = dict(lr=config.lr_base, betas=tuple(config.betas), eps=config.eps)
        s.opt_g = torch.optim.Adam(models.generator_parameters(), **adam)
        s.opt_d_x = torch.optim.Adam(models.d_x.parameters(), **adam)
        s.opt_d_y = torch.optim.Adam(models.d_y.parameters(), **adam)
        for name, opt in s.optimizers().items():
            opt.load_state_dict(payload["optimizers"][name])
        s.pool_x.load_state_dict(payload["pools"]["pool_x"], trainer.device)
        s.pool_y.load_state_dict(payload["pools"]["pool_y"], trainer.device)
        s.epoch = models.epoch
        s.step = models.step
        s.position = int(payload["position"])
        s.epochs_total = int(payload["epochs_total"])
        torch.set_rng_state(payload["torch_rng"])
        logging.info(f"Resumed from {checkpoint}: epoch {s.epoch}, step {s.step}, position {s.position}.")
        return trainer

    # --- loop ---
    def _should_stop(self) -> bool:
        return self.config.max_steps is not None and self.state.step >= self.config.max_steps

    def _open_log(self, name: str, fields: List[str]):
        path = self.out_dir / name
        fresh = not path.exists() or self.state.step == 0
        handle = open(path, "w" if fresh else "a", newline="", encoding="utf-8")
        writer = csv.DictWriter(handle, fieldnames=fields)
        if fresh:
            writer.writeheader()
        return handle, writer

    def run(self) -> TrainResult:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        s = self.state
        cfg = self.config
        result = TrainResult(epochs_total=s.epochs_total)
        latest = self.out_dir / "latest.pt"
        w = self.weights
        weight_cols = {"lambda1": w.lambda1, "lambda2": w.lambda2, "lambda3": w.lambda3, "lambda4": w.lambda4}

        step_handle, step_log = self._open_log("train_log.csv", TRAIN_LOG_FIELDS)
        epoch_handle, epoch_log = self._open_log("epoch_log.csv", EPOCH_LOG_FIELDS)
        try:
            while s.epoch < s.epochs_total:
                if self._should_stop():
                    result.latest_checkpoint = self.save(latest)
                    result.stopped_early = True
                    logging.info(f"Stopped at step {s.step} (max_steps); state saved to {latest}.")
                    return result

                lr = lr_at_epoch(s.epoch, s.epochs_total, cfg.lr_base)
                s.set_lr(lr)
                schedule = build_epoch_schedule(
                    self.manifest, derive_seed(cfg.seed, SCHEDULE_STREAM, s.epoch), cfg.balanced
                )
                dataset = ScheduleDataset(
                    self.manifest, schedule, cfg.augment, cfg.seed, s.epoch, start=s.position
                )
                epoch_reports: List[LossReport] = []
                for batch in make_loader(dataset, cfg.num_workers):
                    if self._should_stop():
                        break
                    _, report = train_step(s, batch, w, cfg.identity_on_paired)
                    epoch_reports.append(report)
                    result.history.append(report)
                    step_log.writerow(
                        {
                            "step": s.step,
                            "epoch": s.epoch,
                            "kind": "paired" if report.is_paired else "unpaired",
                            **{k: f"{v:.8g}" for k, v in report.components().items()},
                            "lr": f"{lr:.8g}",
                            **weight_cols,
                        }
                    )
                    logging.debug(f"step {s.step}: {report.components()}")

                if s.position < len(schedule):
                    continue  # stopped mid-epoch; handled at the top of the loop

                self._log_epoch(epoch_log, lr, epoch_reports)
                step_handle.flush()
                epoch_handle.flush()
                s.epoch += 1
                s.position = 0
                if s.epoch % cfg.checkpoint_interval == 0:
                    self.save(self.out_dir / f"checkpoint_epoch_{s.epoch:04d}.pt")
                result.latest_checkpoint = self.save(latest)
        finally:
            step_handle.close()
            epoch_handle.close()

        result.final_checkpoint = self.save(self.out_dir / "final.pt")
        logging.info(f"Training finished after {s.step} steps; final model at {result.final_checkpoint}.")
        return result

    def _log_epoch(self, writer: csv.DictWriter, lr: float, reports: List[LossReport]) -> None:
        n = max(1, len(reports))
        means = {k: sum(r.components()[k] for r in reports) / n for k in LossReport().components()}
        writer.writerow(
            {
                "epoch": self.state.epoch,
                "lr": f"{lr:.8g}",
                "steps": len(reports),
                "paired_steps": sum(1 for r in reports if r.is_paired),
                **{k: f"{v:.8g}" for k, v in means.items()},
            }
        )
        logging.info(
            f"Epoch {self.state.epoch + 1}/{self.state.epochs_total} lr={lr:.3g} "
            f"gan_g={means['gan_g']:.4f} gan_d={means['gan_d']:.4f} cycle={means['cycle']:.4f} "
            f"identity={means['identity']:.4f} l1={means['l1_paired']:.4f} total={means['total']:.4f}"
        )


def train(
    config: TrainingConfig,
    manifest: DatasetManifest,
    selection: Optional[SelectionResult],
    out_dir: Union[str, Path],
) -> TrainResult:
    return Trainer(config, manifest, out_dir, selection=selection).run()

