"""Attention-mask construction.

Masks are boolean matrices: allowed[i][j] is True iff position i may attend
to position j.  The diagonal is always allowed.
"""

import torch


def build_causal_mask(length):
    """Lower-triangular mask: position i attends to j <= i."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return torch.tril(torch.ones(length, length, dtype=torch.bool))


def build_hybrid_mask(input_len, output_len):
    """Bidirectional over the input prefix, causal over the output suffix.

    Input positions attend to the full input; output positions attend to
    the full input plus output positions up to themselves.
    """
    if input_len < 1 or output_len < 0:
        raise ValueError("need input_len >= 1 and output_len >= 0")
    total = input_len + output_len
    allowed = torch.zeros(total, total, dtype=torch.bool)
    allowed[:, :input_len] = True
    suffix = torch.tril(torch.ones(output_len, output_len, dtype=torch.bool))
    allowed[input_len:, input_len:] = suffix
    return allowed


def pad_attend_mask(lengths, max_len):
    """(B, max_len) bool: True where a real (non-pad) token sits."""
    ar = torch.arange(max_len)
    return ar.unsqueeze(0) < torch.as_tensor(lengths).unsqueeze(1)
