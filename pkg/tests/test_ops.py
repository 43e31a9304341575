import pytest
import torch

from fcgan.substrate import ops
from fcgan.checks import check_ops


def test_identity_kernel_conv_preserves_input():
    x = torch.ones(1, 1, 2, 2)
    w = torch.ones(1, 1, 1, 1)
    b = torch.zeros(1)
    assert torch.equal(ops.conv2d(x, w, b), x)


def test_bias_only_conv():
    x = torch.zeros(2, 3, 4, 4)
    w = torch.randn(5, 3, 3, 3)
    b = torch.full((5,), 0.5)
    out = ops.conv2d(x, w, b)
    assert torch.allclose(out, torch.full_like(out, 0.5))


def test_conv_gradcheck_spec_case():
    # B=1, C=2, 4x4, k=3, step 1e-4 at double precision
    gen = torch.Generator().manual_seed(7)
    x = torch.randn(1, 2, 4, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    w = torch.randn(3, 2, 3, 3, generator=gen, dtype=torch.float64, requires_grad=True)
    b = torch.randn(3, generator=gen, dtype=torch.float64, requires_grad=True)
    r = torch.randn(1, 3, 4, 4, generator=gen, dtype=torch.float64)
    from fcgan.substrate.gradcheck import fd_check
    err = fd_check(lambda: (ops.conv2d(x, w, b) * r).sum(), [x, w, b], eps=1e-4)
    assert err < 1e-4


def test_conv_shape_errors():
    x = torch.randn(1, 2, 4, 4)
    with pytest.raises(ValueError, match="channel mismatch"):
        ops.conv2d(x, torch.randn(1, 3, 3, 3), None)
    with pytest.raises(ValueError, match="kernel size"):
        ops.conv2d(x, torch.randn(1, 2, 5, 5), None)
    with pytest.raises(ValueError, match="stride"):
        ops.conv2d(x, torch.randn(1, 2, 3, 3), None, stride=3)
    with pytest.raises(ValueError, match="non-integral"):
        ops.conv2d(x, torch.randn(1, 2, 3, 3), None, stride=2, pad=1)


def test_sigmoid_zero():
    assert float(ops.sigmoid(torch.zeros(1))) == pytest.approx(0.5)


def test_upsample_nearest_pattern():
    x = torch.tensor([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    expected = torch.tensor([
        [1.0, 1.0, 2.0, 2.0],
        [1.0, 1.0, 2.0, 2.0],
        [3.0, 3.0, 4.0, 4.0],
        [3.0, 3.0, 4.0, 4.0],
    ]).reshape(1, 1, 4, 4)
    assert torch.equal(ops.upsample_nearest2x(x), expected)


def test_concat_then_slice_roundtrip():
    gen = torch.Generator().manual_seed(0)
    a = torch.randn(2, 3, 4, 4, generator=gen)
    b = torch.randn(2, 5, 4, 4, generator=gen)
    cat = ops.concat_channels(a, b)
    assert torch.equal(cat[:, :3], a)
    assert torch.equal(cat[:, 3:], b)


def test_concat_requires_matching_spatial():
    with pytest.raises(ValueError, match="equal batch and spatial"):
        ops.concat_channels(torch.randn(2, 3, 4, 4), torch.randn(2, 3, 8, 8))


def test_add_mul_shape_mismatch():
    a = torch.randn(2, 3, 4, 4)
    b = torch.randn(2, 3, 4, 5)
    with pytest.raises(ValueError):
        ops.add(a, b)
    with pytest.raises(ValueError):
        ops.mul_elementwise(a, b)


def test_avgpool_needs_even_dims():
    with pytest.raises(ValueError, match="even spatial"):
        ops.avgpool2x(torch.randn(1, 1, 3, 4))


def test_global_sum_pool():
    x = torch.ones(2, 3, 4, 4)
    assert torch.equal(ops.global_sum_pool(x), torch.full((2, 3), 16.0))


def test_require_finite():
    ops.require_finite(torch.randn(3))
    with pytest.raises(FloatingPointError):
        ops.require_finite(torch.tensor([1.0, float("nan")]))
    with pytest.raises(FloatingPointError):
        ops.require_finite(torch.tensor([float("inf")]))


def test_batchnorm_eval_before_training_is_an_error():
    bn = ops.BatchNorm2d(3)
    bn.eval()
    with pytest.raises(RuntimeError, match="uninitialized"):
        bn(torch.randn(2, 3, 4, 4))


def test_batchnorm_eval_deterministic_after_training():
    gen = torch.Generator().manual_seed(1)
    bn = ops.BatchNorm2d(3)
    bn.train()
    bn(torch.randn(8, 3, 4, 4, generator=gen))
    bn.eval()
    x = torch.randn(2, 3, 4, 4, generator=gen)
    assert torch.equal(bn(x), bn(x))


def test_batchnorm_normalizes_in_train_mode():
    gen = torch.Generator().manual_seed(2)
    bn = ops.BatchNorm2d(4)
    bn.train()
    out = bn(torch.randn(16, 4, 8, 8, generator=gen) * 3.0 + 1.0).detach()
    assert float(out.mean(dim=(0, 2, 3)).abs().max()) < 1e-5
    assert float((out.var(dim=(0, 2, 3), unbiased=False) - 1.0).abs().max()) < 1e-3


def test_every_op_passes_fd_sweep():
    # >= 20 seeded random instances per op, rel err < 1e-4
    results = check_ops(20)
    assert len(results) >= 13
    for result in results:
        assert result.passed, result.line()
