"""Shared test utilities: the central finite-difference gradient checker."""

import torch

FD_EPS = 1e-6
FD_TOL = 1e-4


def central_diff_max_rel_err(fn, tensors, eps=FD_EPS, max_coords=150, seed=0):
    """Max relative error between autograd gradients and central differences.

    `fn` is a no-arg closure over `tensors` (float64, requires_grad) returning a
    tensor. The output is scalarized against a fixed random probe. Per tensor,
    up to `max_coords` coordinates are perturbed (all of them when small);
    errors are normalized by the largest finite-difference magnitude so that
    near-zero individual entries do not blow up the ratio.
    """
    gen = torch.Generator().manual_seed(seed)
    out = fn()
    probe = torch.randn(out.shape, generator=gen, dtype=out.dtype)

    def loss():
        return (fn() * probe).sum()

    analytic = torch.autograd.grad(loss(), tensors, allow_unused=False)

    max_err = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.detach().reshape(-1)
        n = flat.numel()
        if n <= max_coords:
            coords = range(n)
        else:
            coords = torch.randperm(n, generator=gen)[:max_coords].tolist()
        fd_vals, an_vals = [], []
        for c in coords:
            orig = flat[c].item()
            with torch.no_grad():
                flat[c] = orig + eps
                up = loss().item()
                flat[c] = orig - eps
                down = loss().item()
                flat[c] = orig
            fd_vals.append((up - down) / (2 * eps))
            an_vals.append(grad.reshape(-1)[c].item())
        fd = torch.tensor(fd_vals)
        an = torch.tensor(an_vals)
        scale = max(fd.abs().max().item(), 1e-8)
        max_err = max(max_err, ((an - fd).abs().max() / scale).item())
    return max_err


def as_double_inputs(module, *shapes, seed=0):
    """Double-precision module copy plus random double inputs with grads."""
    gen = torch.Generator().manual_seed(seed)
    module = module.double()
    inputs = [torch.randn(*s, generator=gen, dtype=torch.float64, requires_grad=True)
              for s in shapes]
    return module, inputs
