"""Input gradients and the finite-difference oracle used to audit them.

The numerical side is deliberately independent of autograd: it evaluates
the target function at shifted points and forms central differences, so it
can disagree with a broken backward pass.
"""

from typing import Callable, Sequence

import torch

# The torch backend differentiates grad-norm penalties w.r.t. parameters
# directly, so no finite-difference fallback is active. The mode string is
# recorded in checkpoints and train logs.
DOUBLE_BACKPROP_SUPPORTED = True
GRAD_PENALTY_MODE = "double-backprop"


def input_gradient(scalar: torch.Tensor, x: torch.Tensor,
                   create_graph: bool = False) -> torch.Tensor:
    """d(scalar)/dx through the recorded op graph.

    With create_graph=True the result can itself be differentiated, which
    is what gradient-norm penalties need.
    """
    if scalar.dim() != 0:
        raise ValueError(f"input_gradient expects a scalar output, got shape {tuple(scalar.shape)}")
    (grad,) = torch.autograd.grad(scalar, x, create_graph=create_graph)
    return grad


def numerical_gradient(f: Callable[[], torch.Tensor], x: torch.Tensor,
                       eps: float = 1e-4,
                       coords: Sequence[int] | None = None) -> torch.Tensor:
    """Central-difference gradient of scalar-valued f with respect to x.

    f is re-evaluated with x perturbed in place; coords restricts the check
    to a subset of flat indices (None checks every coordinate).
    """
    flat = x.reshape(-1)
    grad = torch.zeros_like(flat)
    indices = range(flat.numel()) if coords is None else coords

    def evaluate() -> float:
        out = f()
        return float(out.detach()) if isinstance(out, torch.Tensor) else float(out)

    for i in indices:
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + eps
        f_plus = evaluate()
        with torch.no_grad():
            flat[i] = orig - eps
        f_minus = evaluate()
        with torch.no_grad():
            flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(x.shape)


def max_relative_error(analytic: torch.Tensor, numeric: torch.Tensor,
                       coords: Sequence[int] | None = None) -> float:
    """max |a - n| normalized by the largest gradient magnitude seen."""
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    if coords is not None:
        idx = torch.as_tensor(list(coords), dtype=torch.long)
        a = a[idx]
        n = n[idx]
    denom = max(a.abs().max().item(), n.abs().max().item(), 1e-12)
    return (a - n).abs().max().item() / denom


def sample_coords(numel: int, max_coords: int | None,
                  generator: torch.Generator | None = None) -> list[int] | None:
    """Deterministic random subset of flat indices, or None for all of them."""
    if max_coords is None or numel <= max_coords:
        return None
    perm = torch.randperm(numel, generator=generator)
    return sorted(perm[:max_coords].tolist())


def fd_check(f: Callable[[], torch.Tensor], inputs: Sequence[torch.Tensor],
             eps: float = 1e-4, max_coords: int | None = None,
             generator: torch.Generator | None = None) -> float:
    """Compare autograd gradients of f against central differences.

    Returns the worst relative error across all checked inputs. Inputs
    must be float64 leaves with requires_grad set; f must be a pure
    function of them.
    """
    for x in inputs:
        if x.dtype != torch.float64:
            raise ValueError("finite-difference checks run in double precision")
        if not x.requires_grad:
            raise ValueError("fd_check inputs must require grad")
    out = f()
    analytic = torch.autograd.grad(out, inputs, allow_unused=False)
    worst = 0.0
    for x, a in zip(inputs, analytic):
        coords = sample_coords(x.numel(), max_coords, generator)
        numeric = numerical_gradient(f, x, eps=eps, coords=coords)
        worst = max(worst, max_relative_error(a, numeric, coords))
    return worst
