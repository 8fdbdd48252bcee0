"""DDPM noise schedule, forward process, loss and ancestral sampling."""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Tuple, Union

import torch
from torch.nn import functional as F

from app.models.unet import Denoiser
from app.utils.exceptions import InvalidArgumentError, ShapeMismatchError

Timestep = Union[int, torch.Tensor]


@dataclass
class DiffusionSchedule:
    """Linear-β DDPM constants, indexed by timestep t in [1, T].

    ``timesteps`` maps schedule positions to the denoiser timestep; it differs
    from 1..T only for respaced schedules.
    """
    betas: torch.Tensor       # (T,), float64
    timesteps: torch.Tensor   # (T,), int64

    def __post_init__(self):
        self.alphas = 1.0 - self.betas
        self.alpha_bars = torch.cumprod(self.alphas, dim=0)

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    def alpha_bar(self, t: Timestep) -> torch.Tensor:
        return self.alpha_bars[torch.as_tensor(t, dtype=torch.long) - 1]


class NoisyLatent(NamedTuple):
    """z_t together with its timestep."""
    values: torch.Tensor
    t: torch.Tensor


def make_schedule(T: int = 400, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    """Linear β schedule with ᾱ by cumulative product (float64)."""
    if T < 1:
        raise InvalidArgumentError(f"T must be at least 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidArgumentError(
            f"betas must satisfy 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    return DiffusionSchedule(betas=betas, timesteps=torch.arange(1, T + 1))


def respace(schedule: DiffusionSchedule, steps: int) -> DiffusionSchedule:
    """Keep ``steps`` evenly spaced timesteps (always ending at T).

    β'_i = 1 − ᾱ_{τ_i} / ᾱ_{τ_{i−1}} keeps the cumulative products of the
    retained timesteps unchanged.
    """
    if not 1 <= steps <= schedule.T:
        raise InvalidArgumentError(f"steps must lie in [1, {schedule.T}], got {steps}")
    if steps == schedule.T:
        return schedule
    # Built from T downwards so a single step still starts at T.
    positions = torch.linspace(schedule.T, 1, steps, dtype=torch.float64).flip(0).round().long()
    kept = schedule.alpha_bars[positions - 1]
    previous = torch.cat([torch.ones(1, dtype=torch.float64), kept[:-1]])
    return DiffusionSchedule(betas=1.0 - kept / previous, timesteps=schedule.timesteps[positions - 1])


def _broadcast(values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    if values.dim() == 0:
        return values
    return values.reshape(-1, *([1] * (like.dim() - 1)))


def q_sample(x0: torch.Tensor, t: Timestep, eps: torch.Tensor, schedule: DiffusionSchedule) -> NoisyLatent:
    """z_t = √ᾱ_t · x + √(1 − ᾱ_t) · ε with x = 2·x0 − 1.

    Args:
        x0: Clean image(s) in [0, 1]; (3, H, W) or (B, 3, H, W).
        t: Timestep in [1, T], scalar or (B,).
        eps: Standard-normal noise shaped like ``x0``.
        schedule: Diffusion constants.
    """
    if eps.shape != x0.shape:
        raise ShapeMismatchError("noise", x0.shape, eps.shape)
    t = torch.as_tensor(t, dtype=torch.long)
    if bool(((t < 1) | (t > schedule.T)).any()):
        raise InvalidArgumentError(f"timestep must lie in [1, {schedule.T}]")
    alpha_bar = _broadcast(schedule.alpha_bar(t), x0).to(x0.dtype)
    values = alpha_bar.sqrt() * (2.0 * x0 - 1.0) + (1.0 - alpha_bar).sqrt() * eps
    return NoisyLatent(values=values, t=t)


def loss(eps_true: torch.Tensor, eps_pred: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements (ε-prediction objective)."""
    if eps_true.shape != eps_pred.shape:
        raise ShapeMismatchError("predicted noise", eps_true.shape, eps_pred.shape)
    return F.mse_loss(eps_pred, eps_true)


StepTrace = Callable[[int, int, torch.Tensor, torch.Tensor], None]


@torch.no_grad()
def p_sample_loop(
    cond: torch.Tensor,
    unet: Denoiser,
    schedule: DiffusionSchedule,
    rng_seed: int,
    steps: Optional[int] = None,
    image_shape: Tuple[int, int, int] = (3, 32, 32),
    trace: Optional[StepTrace] = None,
) -> torch.Tensor:
    """Ancestral DDPM sampling from z_T ~ N(0, I).

    Args:
        cond: (B, n_ctx, d) condition tokens.
        unet: Noise predictor.
        schedule: Full schedule; respaced when ``steps`` < T.
        rng_seed: Seed of every noise draw.
        steps: Reverse steps (defaults to T).
        image_shape: (C, H, W) of the generated images.
        trace: Optional callback(step, t, eps_hat, z) after every step.

    Returns:
        (B, C, H, W) images in [0, 1].
    """
    sched = respace(schedule, steps or schedule.T)
    dtype = unet.out_conv.weight.dtype
    generator = torch.Generator().manual_seed(rng_seed)
    batch = cond.shape[0]
    z = torch.randn(batch, *image_shape, generator=generator, dtype=dtype)
    for i in reversed(range(sched.T)):
        t = sched.timesteps[i].repeat(batch)
        eps_hat = unet(z, t, cond)
        beta = sched.betas[i].to(dtype)
        alpha = sched.alphas[i].to(dtype)
        alpha_bar = sched.alpha_bars[i].to(dtype)
        mean = (z - beta / (1.0 - alpha_bar).sqrt() * eps_hat) / alpha.sqrt()
        if i > 0:
            noise = torch.randn(z.shape, generator=generator, dtype=dtype)
            z = mean + beta.sqrt() * noise
        else:
            z = mean
        if trace is not None:
            trace(sched.T - i, int(sched.timesteps[i]), eps_hat, z)
    return ((z.clamp(-1.0, 1.0) + 1.0) / 2.0)
