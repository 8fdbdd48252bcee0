"""Two-stage training: trainable masks, the optimization step and the stage runner."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
import torch

from app.config import settings
from app.models.bundle import CROSSFORMER, GLOBAL_HEAD, TOKENIZER, UNET, ModelBundle
from app.models.schemas import ModelConfig, TrainConfig
from app.services.checkpoint import (
    Checkpoint,
    bundle_config,
    load_checkpoint,
    save_checkpoint,
)
from app.services.dataset import TrainingViews, ViewBatch, load_manifest
from app.services.diffusion import DiffusionSchedule, loss, make_schedule, q_sample
from app.utils.exceptions import CheckpointError, InvalidArgumentError
from app.utils.logger import log

LOSS_COLUMNS = ["step", "loss", "lr", "stage"]
OPTIMIZER_SLOTS = ("exp_avg", "exp_avg_sq", "step")


def trainable_mask(bundle: ModelBundle, stage: int, full_unet: bool = True) -> Set[str]:
    """Names of the parameters optimized in ``stage``.

    Stage 1 trains the tokenizer, the fusion module and the U-Net (only its
    cross-attention layers when ``full_unet`` is False). Stage 2 trains the
    fusion module alone, seeds included.
    """
    names = [name for name, _ in bundle.named_parameters()]
    fusion = {n for n in names if n.startswith((f"{CROSSFORMER}.", f"{GLOBAL_HEAD}."))}
    if stage == 2:
        return fusion
    if stage != 1:
        raise InvalidArgumentError(f"stage must be 1 or 2, got {stage}")
    tokenizer = {n for n in names if n.startswith(f"{TOKENIZER}.")}
    unet = {
        n for n in names
        if n.startswith(f"{UNET}.") and (full_unet or "cross_attn." in n)
    }
    return tokenizer | fusion | unet


@dataclass
class TrainingState:
    """Everything that changes from one optimization step to the next."""
    bundle: ModelBundle
    optimizer: torch.optim.AdamW
    schedule: DiffusionSchedule
    param_names: List[str]
    rng: np.random.Generator      # batch composition, view counts, ratios
    generator: torch.Generator    # timesteps, noise, token sampling
    step: int = 0


def build_optimizer(bundle: ModelBundle, mask: Set[str], config: TrainConfig) -> Tuple[torch.optim.AdamW, List[str]]:
    """AdamW over the masked parameters; every other parameter is frozen."""
    params = bundle.named_parameter_dict()
    unknown = mask - set(params)
    if unknown:
        raise InvalidArgumentError(f"mask names unknown parameters: {sorted(unknown)}")
    for name, param in params.items():
        param.requires_grad_(name in mask)
    names = sorted(mask)
    optimizer = torch.optim.AdamW(
        [params[n] for n in names],
        lr=config.learning_rate,
        betas=config.betas,
        weight_decay=config.weight_decay,
    )
    return optimizer, names


def draw_batch(state: TrainingState, views: TrainingViews, config: TrainConfig) -> Tuple[ViewBatch, float]:
    """Sample the next batch and its token sample ratio."""
    if config.stage == 1:
        return views.sample_batch(state.rng, config.batch_size, 1), 1.0
    counts = np.arange(1, config.max_views + 1)
    n_views = int(state.rng.choice(counts, p=config.view_distribution()))
    if config.sample_ratio_range is not None:
        ratio = float(state.rng.uniform(*config.sample_ratio_range))
    else:
        ratio = config.sample_ratio
    return views.sample_batch(state.rng, config.batch_size, n_views), ratio


def train_step(state: TrainingState, batch: ViewBatch, config: TrainConfig, ratio: float = 1.0) -> float:
    """One AdamW update on ``batch``; returns the batch loss."""
    bundle = state.bundle
    bundle.train()
    cond = bundle.condition(
        batch.sources,
        batch.rel_poses,
        ratio=ratio,
        generator=state.generator,
        sampling_mode=config.sampling_mode,
    )
    b = batch.targets.shape[0]
    t = torch.randint(1, state.schedule.T + 1, (b,), generator=state.generator)
    eps = torch.randn(batch.targets.shape, generator=state.generator, dtype=batch.targets.dtype)
    noisy = q_sample(batch.targets, t, eps, state.schedule)
    value = loss(eps, bundle.predict_noise(noisy.values, noisy.t, cond))

    state.optimizer.zero_grad(set_to_none=True)
    value.backward()
    state.optimizer.step()
    state.step += 1
    return float(value.detach())


def optimizer_tensors(state: TrainingState) -> Dict[str, torch.Tensor]:
    """AdamW moments keyed ``<param>/<slot>``."""
    params = state.bundle.named_parameter_dict()
    out: Dict[str, torch.Tensor] = {}
    for name in state.param_names:
        slots = state.optimizer.state.get(params[name], {})
        for slot in OPTIMIZER_SLOTS:
            if slot in slots:
                out[f"{name}/{slot}"] = torch.as_tensor(
                    slots[slot], dtype=torch.float32 if slot == "step" else None
                ).clone()
    return out


def restore_optimizer(state: TrainingState, tensors: Dict[str, torch.Tensor]) -> None:
    """Load moments saved by :func:`optimizer_tensors` into ``state.optimizer``."""
    saved = state.optimizer.state_dict()
    restored = {}
    for index, name in enumerate(state.param_names):
        slots = {slot: tensors[f"{name}/{slot}"] for slot in OPTIMIZER_SLOTS if f"{name}/{slot}" in tensors}
        if slots:
            restored[index] = slots
    saved["state"] = restored
    state.optimizer.load_state_dict(saved)


def make_checkpoint(state: TrainingState, config: TrainConfig) -> Checkpoint:
    """Snapshot of parameters, optimizer moments and RNG states."""
    return Checkpoint(
        parameters={n: p.detach().clone() for n, p in state.bundle.named_parameters()},
        config={
            "model": state.bundle.config.model_dump(mode="json"),
            "train": config.model_dump(mode="json"),
        },
        global_step=state.step,
        stage=config.stage,
        optimizer={
            "param_names": state.param_names,
            "lr": config.learning_rate,
            "betas": list(config.betas),
            "weight_decay": config.weight_decay,
        },
        optimizer_tensors=optimizer_tensors(state),
        rng={"numpy": state.rng.bit_generator.state},
        rng_tensors={"torch": state.generator.get_state()},
    )


class StageRunner:
    """Runs one training stage from a TrainConfig to a final checkpoint."""

    def __init__(self, config: TrainConfig):
        """Initialize the runner; nothing is loaded until :meth:`run`."""
        self.config = config
        self.output_dir = Path(config.output_dir)
        self.loss_path = self.output_dir / f"loss_stage{config.stage}.csv"

    def _model_config(self, source: Optional[Checkpoint]) -> ModelConfig:
        if source is None:
            return self.config.model
        model_config = bundle_config(source)
        if model_config != self.config.model:
            log.info("Model dimensions taken from the checkpoint, not the training config")
        return model_config

    def _initial_state(self) -> TrainingState:
        config = self.config
        source: Optional[Checkpoint] = None
        if config.resume:
            source = load_checkpoint(config.resume)
            if source.stage != config.stage:
                raise CheckpointError(config.resume, f"checkpoint is stage {source.stage}, config is stage {config.stage}")
        elif config.init_checkpoint:
            source = load_checkpoint(config.init_checkpoint)

        torch.manual_seed(config.seed)
        bundle = ModelBundle(self._model_config(source))
        if source is not None:
            missing, unexpected = bundle.load_state_dict(source.parameters, strict=False)
            if missing or unexpected:
                raise CheckpointError(
                    config.resume or config.init_checkpoint,
                    f"parameter mismatch: missing={missing} unexpected={unexpected}",
                )

        mask = trainable_mask(bundle, config.stage, config.full_unet)
        optimizer, names = build_optimizer(bundle, mask, config)
        state = TrainingState(
            bundle=bundle,
            optimizer=optimizer,
            schedule=make_schedule(bundle.config.timesteps, bundle.config.beta_start, bundle.config.beta_end),
            param_names=names,
            rng=np.random.default_rng(config.seed),
            generator=torch.Generator().manual_seed(config.seed),
        )
        if config.resume and source is not None:
            restore_optimizer(state, source.optimizer_tensors)
            state.rng.bit_generator.state = source.rng["numpy"]
            state.generator.set_state(source.rng_tensors["torch"])
            state.step = source.global_step
            log.info(f"Resumed stage {config.stage} at step {state.step} from {config.resume}")
        trainable = sum(p.numel() for n, p in bundle.named_parameters() if n in mask)
        log.info(f"Stage {config.stage}: {len(names)} trainable tensors, {trainable} parameters")
        return state

    def _open_loss_log(self, resumed_step: Optional[int]):
        """Open the loss CSV; a resumed run drops rows logged after its checkpoint."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        append = resumed_step is not None and self.loss_path.exists()
        if append:
            with open(self.loss_path, newline="") as f:
                rows = list(csv.reader(f))
            kept = [r for r in rows[1:] if r and int(r[0]) <= resumed_step]
            if len(kept) < len(rows) - 1:
                log.info(f"Dropping {len(rows) - 1 - len(kept)} loss rows logged after step {resumed_step}")
            with open(self.loss_path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(LOSS_COLUMNS)
                writer.writerows(kept)
        handle = open(self.loss_path, "a" if append else "w", newline="")
        writer = csv.writer(handle)
        if not append:
            writer.writerow(LOSS_COLUMNS)
        return handle, writer

    def run(self) -> Checkpoint:
        """Train until ``config.steps`` and return the final checkpoint."""
        config = self.config
        if settings.deterministic:
            torch.use_deterministic_algorithms(True)
        manifest_path = Path(config.dataset)
        views = TrainingViews(load_manifest(manifest_path), manifest_path.parent, split="train")
        state = self._initial_state()

        handle, writer = self._open_loss_log(state.step if config.resume else None)
        try:
            while state.step < config.steps:
                batch, ratio = draw_batch(state, views, config)
                value = train_step(state, batch, config, ratio)
                writer.writerow([state.step, repr(value), config.learning_rate, config.stage])
                if state.step % config.log_every == 0:
                    handle.flush()
                    log.info(f"stage {config.stage} step {state.step}/{config.steps} loss {value:.5f}")
                if state.step % config.checkpoint_every == 0 and state.step < config.steps:
                    path = self.output_dir / "checkpoints" / f"stage{config.stage}_step{state.step:06d}.ckpt"
                    save_checkpoint(make_checkpoint(state, config), path)
        finally:
            handle.close()

        checkpoint = make_checkpoint(state, config)
        final_path = self.output_dir / f"stage{config.stage}_final.ckpt"
        checkpoint.checkpoint_id = save_checkpoint(checkpoint, final_path)
        log.info(f"Stage {config.stage} finished at step {state.step}: {final_path}")
        return checkpoint


def run_stage(config: TrainConfig) -> Checkpoint:
    """Train one stage as described by ``config``."""
    return StageRunner(config).run()
