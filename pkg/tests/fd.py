"""Central finite-difference oracle for parameter gradients."""

import numpy as np
import torch


def fd_grads(fn, params, index_sets, h=1e-6):
    """Central differences of scalar ``fn()`` at the given flat indices of each tensor."""
    out = []
    with torch.no_grad():
        for p, idx in zip(params, index_sets):
            flat = p.view(-1)
            g = torch.zeros(len(idx), dtype=torch.float64)
            for j, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
                g[j] = (up - down) / (2 * h)
            out.append(g)
    return out


def rel_err(a, b):
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||); 0 when both vanish."""
    denom = max(a.norm().item(), b.norm().item())
    return 0.0 if denom == 0 else (a - b).norm().item() / denom


def check_module_grads(module, loss_fn, names=None, max_elements=48, seed=0):
    """Compare autograd with finite differences, per parameter tensor.

    Tensors larger than ``max_elements`` are checked on a seeded random subset
    of coordinates. Returns ``{name: rel_err}``.
    """
    named = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    if names is not None:
        named = [(n, p) for n, p in named if any(n.startswith(k) for k in names)]
    rng = np.random.default_rng(seed)
    index_sets = [
        np.arange(p.numel()) if p.numel() <= max_elements else rng.choice(p.numel(), max_elements, replace=False)
        for _, p in named
    ]
    module.zero_grad(set_to_none=True)
    loss_fn().backward()
    auto = [
        (p.grad.detach().reshape(-1)[torch.as_tensor(idx)] if p.grad is not None else torch.zeros(len(idx)))
        .to(torch.float64)
        for (_, p), idx in zip(named, index_sets)
    ]
    numeric = fd_grads(loss_fn, [p.data for _, p in named], index_sets)
    return {n: rel_err(a, b) for (n, _), a, b in zip(named, auto, numeric)}
