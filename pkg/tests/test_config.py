import logging

import pytest

from fcgan.config import RunConfig, parse_config_text
from fcgan.losses import LossKind


def test_defaults_follow_the_training_protocol():
    cfg = RunConfig()
    assert cfg.lr == 2e-4
    assert (cfg.beta1, cfg.beta2) == (0.0, 0.9)
    assert cfg.adam_eps == 1e-8
    assert cfg.n_dis == 5
    assert cfg.batch_d == 64
    assert cfg.batch_g == 128  # twice the discriminator batch
    assert cfg.lazy_interval == 16
    assert cfg.gamma == 1.0
    assert cfg.loss_kind == LossKind.HINGE


def test_batch_g_defaults_to_twice_batch_d():
    assert RunConfig(batch_d=32).batch_g == 64


def test_batch_g_override_is_logged(caplog):
    with caplog.at_level(logging.WARNING):
        cfg = RunConfig(batch_d=32, batch_g=32)
    assert cfg.batch_g == 32
    assert any("deviates" in record.message for record in caplog.records)


def test_config_file_roundtrip(tmp_path):
    cfg = RunConfig(block_kind="fcb_c", g_channels=32, total_g_iters=7,
                    loss="ns-logistic-r1", gamma=0.5, determinism=True,
                    data="stripes:width=2.0", out_dir=str(tmp_path / "o"))
    path = tmp_path / "run.cfg"
    cfg.save(path)
    loaded = RunConfig.load(path)
    assert loaded == cfg
    assert loaded.config_hash() == cfg.config_hash()


def test_network_spec_embedded_in_config_roundtrips():
    cfg = RunConfig(block_kind="fcb_dagger", g_channels=48, d_channels=24,
                    latent_dim=64, depth=3, net_seed=5)
    spec = cfg.network_spec()
    assert spec.block_kind == "fcb_dagger"
    assert spec.seed == 5
    from fcgan.networks import NetworkSpec

    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_net_seed_defaults_to_run_seed():
    assert RunConfig(seed=9).net_seed == 9
    assert RunConfig(seed=9, net_seed=2).net_seed == 2


def test_comments_and_blank_lines_are_ignored():
    raw = parse_config_text(
        "# a comment\n"
        "\n"
        "loss = hinge   # trailing comment\n"
        "batch_d = 16\n")
    assert raw == {"loss": "hinge", "batch_d": "16"}
    cfg = RunConfig.from_dict(raw)
    assert cfg.batch_d == 16 and cfg.batch_g == 32


def test_malformed_lines_and_unknown_keys():
    with pytest.raises(ValueError, match="key = value"):
        parse_config_text("just words\n")
    with pytest.raises(ValueError, match="duplicate"):
        parse_config_text("seed = 1\nseed = 2\n")
    with pytest.raises(ValueError, match="unknown config key"):
        RunConfig.from_dict({"learning_rate": "0.1"})
    with pytest.raises(ValueError, match="unknown loss"):
        RunConfig(loss="wasserstein")
    with pytest.raises(ValueError, match="boolean"):
        RunConfig.from_dict({"determinism": "maybe"})


def test_validation_bounds():
    with pytest.raises(ValueError):
        RunConfig(n_dis=0)
    with pytest.raises(ValueError):
        RunConfig(lr=0.0)
    with pytest.raises(ValueError):
        RunConfig(eval_every=-1)
    with pytest.raises(ValueError):
        RunConfig(gamma=-0.5)


def test_hash_ignores_out_dir_only():
    a = RunConfig(out_dir="x")
    b = RunConfig(out_dir="y")
    assert a.config_hash() == b.config_hash()
    assert RunConfig(seed=1).config_hash() != a.config_hash()
