"""Finite-difference verification of analytic gradients.

Runs in double precision with dropout disabled; compares the backprop
gradient against central differences on a sampled subset of coordinates
(at least one per parameter tensor).
"""

import numpy as np
import torch


def gradcheck(model, batch, loss_fn, epsilon=1e-4, max_coords=200, seed=0):
    """Return the max relative error between analytic and numeric gradients.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1), which
    reduces to absolute error for near-zero gradients.
    """
    model = model.double()
    model.eval()  # finite differences require a deterministic loss

    loss = loss_fn(model, batch)
    model.zero_grad(set_to_none=True)
    loss.backward()

    params = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    rng = np.random.default_rng(seed)
    coords = []
    for pi, (name, p) in enumerate(params):
        coords.append((pi, int(rng.integers(p.numel()))))
    while len(coords) < max_coords:
        pi = int(rng.integers(len(params)))
        coords.append((pi, int(rng.integers(params[pi][1].numel()))))

    max_err = 0.0
    with torch.no_grad():
        for pi, flat_idx in coords:
            _, p = params[pi]
            orig = p.view(-1)[flat_idx].item()
            analytic = p.grad.view(-1)[flat_idx].item()

            p.view(-1)[flat_idx] = orig + epsilon
            loss_plus = float(loss_fn(model, batch))
            p.view(-1)[flat_idx] = orig - epsilon
            loss_minus = float(loss_fn(model, batch))
            p.view(-1)[flat_idx] = orig

            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)
            max_err = max(max_err, err)
    return max_err


def fd_gradient(model, batch, loss_fn, param_name, flat_idx, epsilon):
    """Central-difference estimate for one coordinate (test utility)."""
    p = dict(model.named_parameters())[param_name]
    with torch.no_grad():
        orig = p.view(-1)[flat_idx].item()
        p.view(-1)[flat_idx] = orig + epsilon
        lp = float(loss_fn(model, batch))
        p.view(-1)[flat_idx] = orig - epsilon
        lm = float(loss_fn(model, batch))
        p.view(-1)[flat_idx] = orig
    return (lp - lm) / (2.0 * epsilon)
