import pytest
import torch
import torch.nn.functional as F

from planfill.generator import generator_batch_loss
from planfill.nnet import ModelConfig, build_model, fd_gradient, gradcheck
from planfill.planner import KeyphraseSet, PlanExample, planner_batch_loss


def _tiny(kind, seed=0):
    torch.manual_seed(seed)
    cfg = ModelConfig(
        vocab_size=24, d_model=16, n_heads=2, n_layers=2, ffn_dim=32, max_len=40,
        dropout=0.0, kind=kind,
        uses_segment_embeddings=kind != "causal_lm", n_segments=3,
    )
    return build_model(cfg)


def lm_loss(model, batch):
    logits = model(batch).logits
    targets = torch.roll(batch, -1, dims=1)
    return F.cross_entropy(logits.reshape(-1, logits.size(-1)), targets.reshape(-1))


PLAN_BATCH = [
    PlanExample([9, 10, 11], KeyphraseSet([(12, 13), (14,)]),
                [12, 13, 5, 14, 5, 3], [1, 2, 4, 0, 2, 0]),
    PlanExample([15, 16], KeyphraseSet([(17,)]), [17, 5, 3], [0, 3, 0]),
]

GEN_BATCH = [
    ([9, 10], [12, 13, 5], [4, 4, 15, 4], [14, 12, 15, 16]),
    ([11], [14, 5], [4, 17], [17, 18]),
]


def test_near_zero_gradient_case():
    # all-zero output head + uniform targets: head-bias gradient is ~0 and
    # must still match finite differences
    model = _tiny("causal_lm").double()
    with torch.no_grad():
        model.lm_head.weight.zero_()
        model.lm_head.bias.zero_()

    def uniform_loss(m, batch):
        logp = F.log_softmax(m(batch).logits, dim=-1)
        return -logp.mean()

    batch = torch.randint(8, 24, (2, 6))
    loss = uniform_loss(model, batch)
    model.zero_grad()
    loss.backward()
    analytic = model.lm_head.bias.grad
    for idx in range(4):
        num = fd_gradient(model, batch, uniform_loss, "lm_head.bias", idx, 1e-5)
        assert abs(float(analytic[idx]) - num) < 1e-6


@pytest.mark.parametrize(
    "kind,loss_fn,batch",
    [
        ("causal_lm", lm_loss, torch.randint(8, 24, (2, 10), generator=torch.Generator().manual_seed(1))),
        ("bidir_causal_hybrid", lambda m, b: planner_batch_loss(m, b), PLAN_BATCH),
        ("encoder_decoder", lambda m, b: generator_batch_loss(m, b, "pair_full"), GEN_BATCH),
    ],
)
def test_gradcheck_all_kinds(kind, loss_fn, batch):
    model = _tiny(kind)
    err = gradcheck(model, batch, loss_fn, epsilon=1e-4, max_coords=220, seed=7)
    assert err < 1e-4, f"{kind}: {err}"


def test_epsilon_scaling_quadratic():
    # central differences have O(eps^2) truncation error; doubling eps should
    # roughly quadruple it on a coordinate with visible curvature
    model = _tiny("causal_lm", seed=3).double()
    batch = torch.randint(8, 24, (2, 8), generator=torch.Generator().manual_seed(2))
    loss = lm_loss(model, batch)
    model.zero_grad()
    loss.backward()

    eps = 2e-2
    best = None
    params = dict(model.named_parameters())
    name = "blocks.0.ffn.0.weight"
    grads = params[name].grad.view(-1)
    for idx in range(0, 120):
        a = float(grads[idx])
        e1 = abs(fd_gradient(model, batch, lm_loss, name, idx, eps) - a)
        if best is None or e1 > best[1]:
            best = (idx, e1)
    idx, e1 = best
    assert e1 > 1e-9, "need a coordinate where truncation error is visible"
    a = float(grads[idx])
    e2 = abs(fd_gradient(model, batch, lm_loss, name, idx, 2 * eps) - a)
    assert 2.0 < e2 / e1 < 8.0
