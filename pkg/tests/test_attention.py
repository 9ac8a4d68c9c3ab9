import numpy as np
import pytest
import torch

from leafspec.model import EncoderBlock, MultiHeadSelfAttention, TransformerEncoder

torch.manual_seed(0)


def test_attention_rows_sum_to_one():
    attn_module = MultiHeadSelfAttention(dim=32, n_heads=4)
    x = torch.randn(6, 32)
    _, attn = attn_module(x, return_attention=True)
    assert attn.shape == (4, 6, 6)
    assert torch.allclose(attn.sum(dim=-1), torch.ones(4, 6), atol=1e-6)


def test_single_token_attention_is_exactly_one():
    attn_module = MultiHeadSelfAttention(dim=8, n_heads=2)
    x = torch.randn(1, 8)
    y, attn = attn_module(x, return_attention=True)
    assert (attn == 1.0).all()
    # Output reduces to the V projection followed by the output projection.
    expected = attn_module.to_out(attn_module.to_v(x))
    assert torch.allclose(y, expected, atol=1e-6)


def test_zeroed_qk_gives_uniform_attention_and_mean_value():
    torch.manual_seed(1)
    m = MultiHeadSelfAttention(dim=4, n_heads=2)
    with torch.no_grad():
        m.to_q.weight.zero_()
        m.to_k.weight.zero_()
    x = torch.randn(3, 4)
    y, attn = m(x, return_attention=True)
    assert torch.allclose(attn, torch.full((2, 3, 3), 1 / 3), atol=1e-7)
    # Hand-computed with numpy: uniform attention averages the value rows,
    # so every output row is mean(x Wv^T) Wout^T.
    wv = m.to_v.weight.detach().numpy()
    wo = m.to_out.weight.detach().numpy()
    v = x.numpy() @ wv.T
    expected_row = v.mean(axis=0) @ wo.T
    assert np.allclose(y.detach().numpy(), np.tile(expected_row, (3, 1)), atol=1e-6)


def test_permutation_covariance_without_positions():
    torch.manual_seed(2)
    m = MultiHeadSelfAttention(dim=16, n_heads=4)
    x = torch.randn(6, 16)
    y = m(x)
    for seed in range(10):
        g = torch.Generator().manual_seed(seed)
        perm = torch.randperm(6, generator=g)
        y_perm = m(x[perm])
        assert torch.allclose(y_perm, y[perm], atol=1e-6)


def test_encoder_preserves_shape():
    enc = TransformerEncoder(dim=24, n_heads=4, n_layers=2)
    for n in (1, 5, 9):
        x = torch.randn(n, 24)
        assert enc(x, torch.zeros(n, 24)).shape == (n, 24)
    batched = torch.randn(2, 7, 24)
    assert enc(batched).shape == (2, 7, 24)


def test_zero_weights_act_as_identity():
    enc = TransformerEncoder(dim=12, n_heads=3, n_layers=2)
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    x = torch.randn(5, 12)
    assert torch.allclose(enc(x, torch.zeros(5, 12)), x, atol=0.0)


def test_encoder_gradient_matches_finite_differences():
    torch.manual_seed(3)
    enc = TransformerEncoder(dim=8, n_heads=2, n_layers=2).double()
    x = torch.randn(4, 8, dtype=torch.float64, requires_grad=True)
    pos = torch.randn(4, 8, dtype=torch.float64)
    enc(x, pos).sum().backward()
    grad = x.grad.clone()

    eps = 1e-3
    rng = np.random.default_rng(0)
    with torch.no_grad():
        for _ in range(20):
            i, j = int(rng.integers(4)), int(rng.integers(8))
            xp, xm = x.detach().clone(), x.detach().clone()
            xp[i, j] += eps
            xm[i, j] -= eps
            fd = (enc(xp, pos).sum() - enc(xm, pos).sum()).item() / (2 * eps)
            rel = abs(fd - grad[i, j].item()) / max(abs(fd), abs(grad[i, j].item()), 1e-9)
            assert rel < 1e-4, (i, j, fd, grad[i, j].item())
