"""Optimizer schedule and single training step.

Learning rate follows linear warmup then inverse-square-root decay:
lr(step) = lr_max * min(step / warmup, sqrt(warmup / step)), continuous at
step == warmup.  Gradients are globally clipped before every update.
"""

import math

import torch


def lr_at(step, lr_max, warmup):
    if step < 1:
        raise ValueError("step counts from 1")
    return lr_max * min(step / warmup, math.sqrt(warmup / step))


class OptimizerState:
    """Adam plus the warmup/decay schedule and gradient clipping."""

    def __init__(self, model, lr_max=5e-5, warmup=500, grad_clip=1.0):
        self.lr_max = lr_max
        self.warmup = warmup
        self.grad_clip = grad_clip
        self.adam = torch.optim.Adam(model.parameters(), lr=lr_max)

    def set_lr(self, step):
        lr = lr_at(step, self.lr_max, self.warmup)
        for group in self.adam.param_groups:
            group["lr"] = lr
        return lr


def train_step(model, batch, loss_fn, opt_state, step):
    """One update; returns the pre-update loss value."""
    model.train()
    loss = loss_fn(model, batch)
    if not torch.isfinite(loss):
        raise RuntimeError("diverged")
    opt_state.adam.zero_grad(set_to_none=True)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(
        (p for g in opt_state.adam.param_groups for p in g["params"]),
        opt_state.grad_clip,
    )
    opt_state.set_lr(step)
    opt_state.adam.step()
    return float(loss.detach())


def run_training(model, batches, loss_fn, opt_state, max_steps, log_every=200, log=None):
    """Drive train_step over an iterable of batches for max_steps updates."""
    step = 0
    last = float("nan")
    for batch in batches:
        step += 1
        last = train_step(model, batch, loss_fn, opt_state, step)
        if log is not None and (step % log_every == 0 or step == max_steps):
            log(step, last)
        if step >= max_steps:
            break
    return last
