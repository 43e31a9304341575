import pytest
import torch

from fcgan.checks import check_networks
from fcgan.networks import (
    Discriminator,
    Generator,
    NetworkSpec,
    build_networks,
    count_parameters,
)

SMALL = NetworkSpec(block_kind="fcb", g_channels=16, d_channels=16, seed=0)


def _primed(gen_net, batch=4):
    z = torch.randn(batch, gen_net.spec.latent_dim,
                    generator=torch.Generator().manual_seed(123))
    gen_net.train()
    with torch.no_grad():
        gen_net(z)
    gen_net.eval()
    return gen_net


@pytest.mark.parametrize("kind", ["resblock", "fcb", "fcb_s", "fcb_c", "fcb_dagger"])
def test_generator_output_contract(kind):
    spec = NetworkSpec(block_kind=kind, g_channels=16, d_channels=16, seed=1)
    gen_net = Generator(spec)
    out = gen_net(torch.randn(7, 128, generator=torch.Generator().manual_seed(0))).detach()
    assert out.shape == (7, 3, 32, 32)
    assert float(out.min()) >= -1.0 and float(out.max()) <= 1.0


def test_output_shapes_identical_across_block_kinds():
    shapes = set()
    for kind in ("resblock", "fcb", "fcb_s", "fcb_c", "fcb_dagger"):
        spec = NetworkSpec(block_kind=kind, g_channels=16, d_channels=16, seed=1)
        out = Generator(spec)(torch.randn(2, 128, generator=torch.Generator().manual_seed(0)))
        shapes.add(tuple(out.shape))
    assert shapes == {(2, 3, 32, 32)}


def test_generator_bounded_even_with_extreme_weights():
    gen_net = Generator(SMALL)
    with torch.no_grad():
        for p in gen_net.parameters():
            p.mul_(50.0)
    out = gen_net(torch.randn(3, 128, generator=torch.Generator().manual_seed(2))).detach()
    assert float(out.abs().max()) <= 1.0


def test_zero_latent_is_deterministic_in_eval_mode():
    gen_net = _primed(Generator(SMALL))
    z = torch.zeros(2, 128)
    assert torch.equal(gen_net(z), gen_net(z))


def test_same_spec_same_initialization():
    a = Generator(SMALL)
    b = Generator(SMALL)
    for (name, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(pa, pb), name


def test_latent_dim_mismatch_is_an_error():
    gen_net = Generator(SMALL)
    with pytest.raises(ValueError, match="latent"):
        gen_net(torch.randn(2, 64))
    with pytest.raises(FloatingPointError):
        gen_net(torch.full((2, 128), float("nan")))


def test_resblock_generator_has_no_memory_machinery():
    spec = NetworkSpec(block_kind="resblock", g_channels=16, d_channels=16)
    assert Generator(spec).image_constant is None
    assert Generator(SMALL).image_constant is not None


def test_discriminator_scalar_per_sample():
    disc = Discriminator(SMALL)
    scores = disc(torch.randn(5, 3, 32, 32, generator=torch.Generator().manual_seed(0)))
    assert scores.shape == (5,)


def test_discriminator_rejects_wrong_resolution():
    disc = Discriminator(SMALL)
    with pytest.raises(ValueError, match="discriminator expects"):
        disc(torch.randn(2, 3, 16, 16))
    with pytest.raises(ValueError):
        disc(torch.randn(2, 1, 32, 32))


def test_discriminator_batch_permutation_equivariance():
    disc = Discriminator(SMALL)
    disc.eval()  # freeze power-iteration state
    x = torch.randn(6, 3, 32, 32, generator=torch.Generator().manual_seed(1))
    perm = torch.tensor([3, 1, 5, 0, 2, 4])
    assert torch.allclose(disc(x)[perm], disc(x[perm]), atol=1e-5)


def test_head_bias_shifts_every_score():
    # spectral normalization forbids exactly-zero weights, so the bias-only
    # behaviour is checked as a shift: adding b to the head bias adds b to
    # every output.
    disc = Discriminator(SMALL)
    disc.eval()
    x = torch.randn(4, 3, 32, 32, generator=torch.Generator().manual_seed(2))
    base = disc(x)
    with torch.no_grad():
        disc.head.bias.add_(2.5)
    shifted = disc(x)
    assert torch.allclose(shifted, base + 2.5, atol=1e-6)


def test_zeroed_weights_trip_the_spectral_guard():
    disc = Discriminator(SMALL)
    with torch.no_grad():
        disc.blocks[0].conv1.weight.zero_()
    with pytest.raises(ValueError, match="zero"):
        disc(torch.randn(1, 3, 32, 32))


@pytest.mark.parametrize("k", [1, 4, 16])
def test_width_scaled_configs_build_and_run(k):
    spec = NetworkSpec(block_kind="fcb", seed=0).scaled(k)
    gen_net, disc = build_networks(spec)
    x = gen_net(torch.randn(1, 128, generator=torch.Generator().manual_seed(0)))
    assert disc(x).shape == (1,)


def test_count_parameters_reports_blocks_and_total():
    counts = count_parameters(Generator(SMALL))
    assert set(counts) >= {"stem", "image_constant", "blocks.0", "blocks.1", "blocks.2",
                           "head_bn", "head_conv", "total"}
    assert counts["total"] == sum(v for k, v in counts.items() if k != "total")
    assert counts == count_parameters(Generator(SMALL))  # repeatable


def test_constant_input_is_the_only_extra_cost_of_sum_fusion():
    # at 256 wide with equal in/out channels the sum-fusion generator differs
    # from the residual generator by exactly the 256*4*4 trainable constant
    res = count_parameters(Generator(NetworkSpec(block_kind="resblock")))
    summed = count_parameters(Generator(NetworkSpec(block_kind="fcb_s")))
    delta = summed["total"] - res["total"]
    assert delta == summed["image_constant"] == 256 * 4 * 4 == 4096


def test_gated_fusion_generator_is_larger_than_sum_fusion():
    gated = count_parameters(Generator(NetworkSpec(block_kind="fcb", g_channels=64)))
    summed = count_parameters(Generator(NetworkSpec(block_kind="fcb_s", g_channels=64)))
    assert gated["total"] > summed["total"]


def test_network_spec_roundtrip_and_validation():
    spec = NetworkSpec(block_kind="fcb_c", g_channels=32, d_channels=16, seed=7)
    assert NetworkSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError, match="block kind"):
        NetworkSpec(block_kind="mystery")
    with pytest.raises(ValueError):
        NetworkSpec(g_channels=0)
    assert spec.image_size == 32


def test_custom_fusion_pair_plugs_in():
    from fcgan.blocks import ConcatFusion

    def factory(t, s, o, g):
        return ConcatFusion(t, s, o, g)

    gen_net = Generator(SMALL, fusions=(factory, factory))
    out = gen_net(torch.randn(2, 128, generator=torch.Generator().manual_seed(0)))
    assert out.shape == (2, 3, 32, 32)
    with pytest.raises(ValueError, match="two-branch"):
        Generator(NetworkSpec(block_kind="resblock"), fusions=(factory, factory))


def test_network_gradients_pass_fd_sweep():
    for result in check_networks(5):
        assert result.passed, result.line()
