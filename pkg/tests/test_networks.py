import pytest
import torch
from torch.func import functional_call

from modules.errors import ConfigError, InvalidInputError
from modules.networks import (
    build_discriminator,
    build_generator,
    build_model_state,
    discriminator_layer_specs,
    load_model_state,
    read_checkpoint,
    receptive_field,
    save_model_state,
    translate,
)
from modules.settings_manager import DiscriminatorConfig, GeneratorConfig, profile_config


def _scalar_gradcheck(net, x, seed=0):
    """Checks d/dparams of a fixed random projection of the network output.

    The small step keeps finite differences from straddling ReLU kinks.
    """
    net = net.double()
    x = x.double()
    names = [name for name, _ in net.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for _, p in net.named_parameters())
    with torch.no_grad():
        weights = torch.randn(net(x).shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)

    def projected(*flat):
        return (functional_call(net, dict(zip(names, flat)), (x,)) * weights).sum()

    return torch.autograd.gradcheck(projected, params, eps=1e-8, atol=1e-5, rtol=1e-4)


def test_generator_preserves_shape_and_range():
    gen = build_generator(GeneratorConfig(base_width=4, n_residual_blocks=2), seed=0)
    x = torch.rand(2, 3, 32, 48) * 2 - 1
    out = gen(x)
    assert out.shape == x.shape
    assert out.abs().max() <= 1.0


def test_discriminator_emits_raw_logit_map():
    disc = build_discriminator(DiscriminatorConfig(base_width=4, n_layers=3), seed=0)
    out = disc(torch.randn(1, 3, 64, 64))
    assert out.shape == (1, 1, 6, 6)


def test_receptive_field_of_default_discriminator_is_70():
    assert receptive_field(profile_config("paper").discriminator) == 70
    assert receptive_field(DiscriminatorConfig()) == 70
    assert discriminator_layer_specs(DiscriminatorConfig(n_layers=1)) == [(4, 2), (4, 1), (4, 1)]
    assert receptive_field([(3, 1)]) == 3
    assert receptive_field([(4, 1)]) == 4
    assert receptive_field([(3, 1), (3, 1)]) == 5
    assert receptive_field([(4, 2), (4, 1), (4, 1)]) == 16


def test_weight_init_is_seeded():
    cfg = GeneratorConfig(base_width=4, n_residual_blocks=1)
    a = build_generator(cfg, seed=5).state_dict()
    b = build_generator(cfg, seed=5).state_dict()
    c = build_generator(cfg, seed=6).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_model_state_networks_differ():
    state = build_model_state(GeneratorConfig(base_width=4, n_residual_blocks=1), DiscriminatorConfig(base_width=4), seed=0)
    w_xy = next(state.g_xy.parameters())
    w_yx = next(state.g_yx.parameters())
    assert not torch.equal(w_xy, w_yx)
    assert len(state.generator_parameters()) == 2 * len(list(state.g_xy.parameters()))


def test_invalid_configs_are_rejected():
    with pytest.raises(ValueError):
        GeneratorConfig(n_residual_blocks=0)
    with pytest.raises(ConfigError):
        build_generator(GeneratorConfig.model_construct(base_width=4, n_residual_blocks=0, input_channels=3, output_channels=3, norm=True, norm_affine=False), seed=0)


def test_translate_validates_input_and_restores_mode():
    gen = build_generator(GeneratorConfig(base_width=4, n_residual_blocks=1), seed=0)
    gen.train()
    out = translate(gen, torch.zeros(3, 16, 16))
    assert out.shape == (3, 16, 16)
    assert gen.training
    with pytest.raises(InvalidInputError):
        translate(gen, torch.zeros(1, 16, 16))
    with pytest.raises(InvalidInputError):
        translate(gen, torch.zeros(3, 18, 16))


def test_checkpoint_round_trip(tmp_path):
    gen_cfg = GeneratorConfig(base_width=4, n_residual_blocks=1)
    disc_cfg = DiscriminatorConfig(base_width=4, n_layers=2)
    state = build_model_state(gen_cfg, disc_cfg, seed=1)
    state.step, state.epoch = 17, 3
    path = tmp_path / "ckpt" / "model.pt"
    save_model_state(state, path)
    assert not path.with_suffix(".pt.tmp").exists()

    loaded = load_model_state(path)
    assert (loaded.step, loaded.epoch) == (17, 3)
    assert loaded.generator_config == gen_cfg
    x = torch.rand(1, 3, 16, 16) * 2 - 1
    assert torch.equal(translate(state.g_xy, x), translate(loaded.g_xy, x))
    for name, net in state.networks().items():
        other = loaded.networks()[name].state_dict()
        assert all(torch.equal(v, other[k]) for k, v in net.state_dict().items())


def test_checkpoint_version_is_checked(tmp_path):
    path = tmp_path / "future.pt"
    torch.save({"format_version": 99}, path)
    with pytest.raises(ConfigError):
        read_checkpoint(path)
    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(ConfigError):
        read_checkpoint(tmp_path / "junk.pt")


@pytest.mark.parametrize("case", range(20))
def test_generator_gradients_match_finite_differences(case):
    gen = build_generator(GeneratorConfig(base_width=2, n_residual_blocks=1), seed=case)
    x = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(2 * case + 1)) * 2 - 1
    assert _scalar_gradcheck(gen, x, seed=case)


@pytest.mark.parametrize("case", range(20))
def test_discriminator_gradients_match_finite_differences(case):
    disc = build_discriminator(DiscriminatorConfig(base_width=2, n_layers=3), seed=case)
    x = torch.rand(1, 3, 32, 32, generator=torch.Generator().manual_seed(2 * case + 2)) * 2 - 1
    assert _scalar_gradcheck(disc, x, seed=case)
