"""GAN objectives: vanilla, hinge, and non-saturating logistic with a
lazily applied gradient-norm penalty on real samples.

Scores are raw discriminator outputs (logits). Expectations are realized
as mini-batch means. The penalty fires once every `lazy_interval`
discriminator steps and is scaled by the interval so its average effect
matches the per-step formulation.
"""

from dataclasses import dataclass
from enum import Enum

import torch

from .substrate.gradcheck import input_gradient


class LossKind(str, Enum):
    VANILLA = "vanilla"
    HINGE = "hinge"
    NS_LOGISTIC_R1 = "ns-logistic-r1"


@dataclass(frozen=True)
class Objective:
    """Loss selection plus penalty weight and cadence."""

    kind: LossKind = LossKind.HINGE
    gamma: float = 1.0
    lazy_interval: int = 16

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.lazy_interval < 1:
            raise ValueError("lazy_interval must be >= 1")


def softplus(t: torch.Tensor) -> torch.Tensor:
    """log(1 + e^t) computed as max(t, 0) + log1p(e^-|t|); overflow-free."""
    return torch.clamp_min(t, 0.0) + torch.log1p(torch.exp(-t.abs()))


def _check_scores(scores: torch.Tensor, name: str) -> torch.Tensor:
    if scores.numel() == 0:
        raise ValueError(f"{name} scores are empty")
    if not torch.isfinite(scores).all():
        raise FloatingPointError(f"{name} scores contain NaN or Inf")
    return scores


def lazy_schedule(step: int, interval: int) -> bool:
    """True on the steps where the lazy regularizer fires."""
    if step < 0 or interval < 1:
        raise ValueError("step must be >= 0 and interval >= 1")
    return step % interval == 0


def grad_norm_penalty(real_scores: torch.Tensor, x_real: torch.Tensor) -> torch.Tensor:
    """mean_b ||d D(x_b) / d x_b||^2, differentiable w.r.t. D's parameters."""
    grad = input_gradient(real_scores.sum(), x_real, create_graph=True)
    return grad.reshape(grad.shape[0], -1).square().sum(dim=1).mean()


def d_loss(kind: LossKind, real_scores: torch.Tensor, fake_scores: torch.Tensor,
           x_real: torch.Tensor | None = None, step: int = 0,
           gamma: float = 1.0, lazy_interval: int = 16,
           parts: dict | None = None) -> torch.Tensor:
    """Discriminator loss for one mini-batch pair.

    For the logistic+penalty kind, `x_real` must be the (grad-enabled) real
    batch the real scores were computed from; the penalty is added only on
    steps selected by the lazy schedule. `parts`, when given, receives the
    adversarial term and penalty value for logging.
    """
    real_scores = _check_scores(real_scores, "real")
    fake_scores = _check_scores(fake_scores, "fake")
    if kind == LossKind.VANILLA:
        loss = softplus(-real_scores).mean() + softplus(fake_scores).mean()
    elif kind == LossKind.HINGE:
        loss = torch.relu(1.0 - real_scores).mean() + torch.relu(1.0 + fake_scores).mean()
    elif kind == LossKind.NS_LOGISTIC_R1:
        loss = softplus(-real_scores).mean() + softplus(fake_scores).mean()
        if parts is not None:
            parts["adversarial"] = float(loss.detach())
        if gamma > 0 and lazy_schedule(step, lazy_interval):
            if x_real is None:
                raise ValueError("gradient penalty needs the real input batch")
            # Logged "r1" is the per-step penalty term (gamma/2) * mean||dD/dx||^2;
            # the loss carries the interval multiplier that compensates for the
            # steps it skips.
            penalty_term = (gamma / 2.0) * grad_norm_penalty(real_scores, x_real)
            loss = loss + lazy_interval * penalty_term
            if parts is not None:
                parts["r1"] = float(penalty_term.detach())
    else:
        raise ValueError(f"unknown loss kind: {kind!r}")
    return loss


def g_loss(kind: LossKind, fake_scores: torch.Tensor) -> torch.Tensor:
    """Generator loss from discriminator scores on generated samples."""
    fake_scores = _check_scores(fake_scores, "fake")
    if kind == LossKind.VANILLA:
        return softplus(-fake_scores).mean()
    if kind == LossKind.HINGE:
        return -fake_scores.mean()
    if kind == LossKind.NS_LOGISTIC_R1:
        return softplus(-fake_scores).mean()
    raise ValueError(f"unknown loss kind: {kind!r}")
