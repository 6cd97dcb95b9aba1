import numpy as np
import pytest

from msadnet.errors import ConfigError, ContractError
from msadnet.gradcheck import check_gradients
from msadnet.model import ModelConfig, build_msadnet, classifier_width, spatial_trace
from msadnet.tensor import Tensor

from conftest import desk_config, tiny_config


@pytest.fixture(scope="module")
def default_model():
    return build_msadnet(ModelConfig())


def test_default_dimension_trace(default_model):
    m = default_model
    assert spatial_trace(m) == [224, 112, 56, 28, 14, 7]
    assert len(m.pools_on_path("base")) == 5
    assert m.node("block5_out").out_shape == (224, 7, 7)
    assert m.node("base_gap").out_shape == (224,)
    assert classifier_width(m) == 320


def test_default_branch_shapes(default_model):
    m = default_model
    assert m.node("sam_in").out_shape == (64, 28, 28)
    assert m.node("sam_out").out_shape == (96, 8, 8)
    assert m.node("block5_in").out_shape == (160, 14, 14)
    assert m.node("skip1.proj").out_shape == (160, 14, 14)


def test_sam_disabled_classifier_width():
    m = build_msadnet(ModelConfig(enable_sam=False))
    assert classifier_width(m) == 224
    assert "sam_out" not in m.aliases


def test_forward_outputs_probabilities():
    m = build_msadnet(desk_config())
    x = np.random.default_rng(0).uniform(0, 1, (3, 1, 112, 112)).astype(np.float32)
    p = m.forward(x, "infer").data
    assert p.shape == (3, 4) and p.dtype == np.float32
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-5)
    assert m.activations["logits"].shape == (3, 4)


def test_three_channel_and_class_count():
    m = build_msadnet(desk_config(input_channels=3, num_classes=3))
    assert m.forward(np.zeros((1, 3, 112, 112), np.float32)).shape == (1, 3)


def test_input_shape_is_checked():
    m = build_msadnet(desk_config())
    with pytest.raises(ContractError, match="expected input"):
        m.forward(np.zeros((1, 1, 64, 64), np.float32))


def test_initialization_is_seeded_and_per_node():
    a = build_msadnet(desk_config(seed=3)).state_dict()
    b = build_msadnet(desk_config(seed=3)).state_dict()
    c = build_msadnet(desk_config(seed=4)).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["b1.conv.kernel"], c["b1.conv.kernel"])
    # toggling the attention branch leaves shared layers' initial values untouched
    d = build_msadnet(desk_config(seed=3, enable_sam=False)).state_dict()
    assert np.array_equal(a["b5.s3.conv3x3.kernel"], d["b5.s3.conv3x3.kernel"])


def test_initial_biases_and_bn():
    s = build_msadnet(desk_config()).state_dict()
    assert all(not v.any() for k, v in s.items() if k.endswith(".bias") or k.endswith(".beta"))
    assert all((v == 1).all() for k, v in s.items() if k.endswith(".gamma") or k.endswith("running_var"))


def test_state_dict_round_trip():
    a = build_msadnet(desk_config(seed=1))
    b = build_msadnet(desk_config(seed=2))
    b.load_state_dict(a.state_dict())
    x = np.random.default_rng(0).uniform(0, 1, (2, 1, 112, 112)).astype(np.float32)
    np.testing.assert_array_equal(a.forward(x).data, b.forward(x).data)
    with pytest.raises(ContractError):
        build_msadnet(desk_config(sam_filters=8)).load_state_dict(a.state_dict())


def test_plain_conv5x5_variant():
    m = build_msadnet(ModelConfig(sam_uses_plain_conv5x5=True))
    assert m.node("sam.conv5x5").out_shape == (96, 24, 24)
    assert m.node("sam_out").out_shape == (96, 8, 8)


@pytest.mark.parametrize(
    "kw",
    [
        dict(dense1_plan=(1, 2, 3)),
        dict(block_filters=(8, 0, 8)),
        dict(num_classes=1),
        dict(input_channels=2),
        dict(dilation_rate=1),
        dict(precision="float16"),
        dict(input_size=16),
        dict(enable_sam=False, sam_uses_plain_conv5x5=True),
        dict(sam_tap_stage=6),
    ],
)
def test_invalid_configs_rejected(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_sam_needs_enough_spatial_extent():
    with pytest.raises(ConfigError, match="attention branch"):
        build_msadnet(ModelConfig(input_size=64))
    build_msadnet(ModelConfig(input_size=64, enable_sam=False))


def test_unknown_tap_lists_aliases():
    m = build_msadnet(desk_config())
    with pytest.raises(KeyError, match="block5_conv"):
        m.resolve_tap("nope")


def test_config_round_trip():
    c = desk_config(seed=9)
    assert ModelConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigError, match="unknown"):
        ModelConfig.from_dict({"widht": 3})


def _randomize_offsets(model, rng):
    # zero-initialized biases put dead channels exactly on a ReLU kink, where
    # finite differences see a one-sided slope; check at a generic point
    for name, p in model.named_parameters():
        if name.endswith("bias") or name.endswith("beta"):
            p.data[...] = rng.uniform(-0.1, 0.1, p.shape)


@pytest.mark.parametrize("seed", [0, 1])
def test_full_model_gradient_tiny(seed):
    m = build_msadnet(tiny_config(seed=seed))
    rng = np.random.default_rng(seed)
    _randomize_offsets(m, rng)
    x = Tensor(rng.uniform(0, 1, (2, 1, 32, 32)), requires_grad=True)
    err = check_gradients(lambda x, *p: m.forward(x, "train"), [x] + m.parameters(), seed=seed, aggregate=True)
    assert err[0] <= 1e-4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_model_gradient_with_attention_branch(seed):
    m = build_msadnet(tiny_config(input_size=112, enable_sam=True, seed=seed))
    rng = np.random.default_rng(seed)
    _randomize_offsets(m, rng)
    x = Tensor(rng.uniform(0, 1, (2, 1, 112, 112)), requires_grad=True)
    # thousands of pooling windows make near-ties likely at h=1e-5; a smaller step stays clear of them
    err = check_gradients(
        lambda x, *p: m.forward(x, "train"), [x] + m.parameters(), h=1e-7, seed=seed, max_probes=12, aggregate=True
    )
    assert err[0] <= 1e-4
