import numpy as np
import pytest

from msadnet.data.image import resize_array
from msadnet.data.pnm import ImageBuffer
from msadnet.errors import ContractError
from msadnet.gradcam import COLORMAP, gradcam, overlay, peak_quadrant
from msadnet.model import build_msadnet

from conftest import desk_config


@pytest.fixture(scope="module")
def model():
    m = build_msadnet(desk_config(precision="float64", seed=2))
    rng = np.random.default_rng(0)
    # random offsets so the rectified maps are not trivially empty
    for name, p in m.named_parameters():
        if name.endswith("bias"):
            p.data[...] = rng.uniform(0, 0.2, p.shape)
    return m


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(3).uniform(0, 1, (1, 1, 112, 112))


def test_closed_form_weights_after_last_pool(model, image):
    # downstream of block5_out the logit is linear in the GAP features, so each
    # channel weight is W[c, j] / (H * W) and needs no backward pass
    model.forward(image)
    A = model.activations[model.resolve_tap("block5_out")].data[0]
    W = model.node("classifier").params["weights"].data
    nonzero = 0
    for c in range(4):
        hm = gradcam(model, image, c, tap="block5_out")
        alpha = W[c, : A.shape[0]] / (A.shape[1] * A.shape[2])
        cam = np.maximum(np.tensordot(alpha, A, axes=(0, 0)), 0)
        np.testing.assert_allclose(hm.raw, cam, rtol=1e-10, atol=1e-14)
        up = resize_array(cam, 112, 112)
        want = up / up.max() if up.max() > 0 else np.zeros_like(up)
        np.testing.assert_allclose(hm.values, want, rtol=1e-10, atol=1e-14)
        nonzero += bool(cam.any())
    assert nonzero >= 1


def test_values_in_unit_interval(model, image):
    for tap in ("block5_conv", "block4_out", "sam_out", "block3_out"):
        for c in range(4):
            v = gradcam(model, image, c, tap=tap).values
            assert v.shape == (112, 112)
            assert v.min() >= 0.0 and v.max() <= 1.0
            assert v.max() in (0.0, 1.0)


def test_zero_gradient_gives_all_zero_map(image):
    m = build_msadnet(desk_config(precision="float64"))
    m.node("classifier").params["weights"].data[...] = 0.0
    hm = gradcam(m, image, 0)
    assert hm.values.shape == (112, 112)
    assert not hm.values.any()


def test_default_class_is_prediction(model, image):
    hm = gradcam(model, image)
    assert hm.target_class == int(np.argmax(model.predict_proba(image)[0]))


def test_no_gradient_state_leaks(model, image):
    gradcam(model, image, 0)
    assert all(p.grad is None for p in model.parameters())


def test_errors(model, image):
    with pytest.raises(KeyError, match="block5_conv"):
        gradcam(model, image, 0, tap="nowhere")
    with pytest.raises(ContractError, match="out of range"):
        gradcam(model, image, 4)
    with pytest.raises(ContractError, match="spatial"):
        gradcam(model, image, 0, tap="gap_out")


def test_colormap_and_overlay():
    assert COLORMAP.shape == (256, 3) and COLORMAP.dtype == np.uint8
    assert COLORMAP[0, 2] > 100 and COLORMAP[0, 0] == 0  # cold end is blue
    assert COLORMAP[255, 0] > 100 and COLORMAP[255, 2] == 0  # hot end is red
    img = ImageBuffer(np.full((4, 4), 100, np.uint8))
    heat = np.linspace(0, 1, 16).reshape(4, 4)
    np.testing.assert_array_equal(overlay(img, heat, alpha=0.0).pixels, 100)
    full = overlay(img, heat, alpha=1.0).pixels
    np.testing.assert_array_equal(full[3, 3], COLORMAP[255])
    mixed = overlay(img, heat, alpha=0.4).pixels
    want = np.floor(0.6 * 100 + 0.4 * COLORMAP[0].astype(float) + 0.5)
    np.testing.assert_array_equal(mixed[0, 0], want)
    with pytest.raises(ContractError):
        overlay(img, np.zeros((3, 4)))


def test_peak_quadrant():
    v = np.zeros((10, 10))
    v[7, 2] = 1
    assert peak_quadrant(v) == 2
    v[1, 8] = 2
    assert peak_quadrant(v) == 1
