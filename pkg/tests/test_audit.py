import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msadnet.audit import (
    audit,
    count_batchnorm,
    count_conv,
    count_conv1x1,
    count_dwsc_full,
    count_dwsc_paper,
    count_sandwich,
)
from msadnet.errors import AuditError
from msadnet.model import ModelConfig, build_msadnet


def expected_total(c: ModelConfig) -> int:
    """Trainable-parameter total written out layer by layer from the topology."""
    total = 0
    cin = c.input_channels
    for f in c.block_filters:
        total += (9 * cin + 1) * f + 2 * f
        cin = f
    block3 = cin

    def dense(cin, plan):
        p0, p1, p2, p3, p4, p5 = plan
        return (
            9 * cin + (cin + 1) * p0
            + (9 * p0 + 1) * p1
            + (p1 + 1) * p2
            + (9 * p2 + 1) * p3
            + 9 * p3 + (p3 + 1) * p4
            + 9 * p4 + (p4 + 1) * p5
        )

    total += dense(block3, c.dense1_plan)
    if c.enable_skip1:
        total += (block3 + 1) * c.dense1_plan[-1]
    total += dense(c.dense1_plan[-1], c.dense2_plan)
    width = c.dense2_plan[-1]
    if c.enable_sam:
        t = c.dense1_plan[c.sam_tap_stage]
        b = c.sam_filters
        k = 5 if c.sam_uses_plain_conv5x5 else 3
        total += 25 * t + (t + 1) * t  # dwsc 5x5 keeps the width
        total += (k * k * t + 1) * b + 2 * b
        total += 25 * b + (b + 1) * b + 2 * b
        width += b
    return total + (width + 1) * c.num_classes


def test_sandwich_conformance_exact():
    assert count_sandwich(128, 64, 160) == (100_576, 184_480, 83_904)


@pytest.mark.parametrize("c", [1, 64, 96, 128])
def test_dwsc_simplified_count(c):
    assert count_dwsc_paper(c) == 10 * c


def test_dwsc_simplified_rejects_empty():
    with pytest.raises(ValueError):
        count_dwsc_paper(0)


def test_primitive_formulas():
    assert count_conv(1, 32, 3) == 320
    assert count_conv1x1(96, 160) == 15_520
    assert count_dwsc_full(64, 64, 5) == 1600 + 4160
    assert count_batchnorm(96) == 192


def test_default_audit():
    c = ModelConfig()
    rep = audit(build_msadnet(c))
    assert rep.ok
    assert rep.grand_total == expected_total(c) == 1_161_924
    assert 880_000 <= rep.grand_total <= 1_320_000
    assert rep.sandwiches["b4"]["with_bottleneck"] == 100_576
    assert rep.sandwiches["b4"]["without_bottleneck"] == 184_480
    assert rep.sandwiches["b4"]["savings"] == 83_904
    assert rep.block_totals["b1"] == 384
    assert rep.block_totals["sam"] == 73_248
    assert rep.block_totals["head"] == 1_284


def test_sam_removal_is_additive():
    with_sam = audit(build_msadnet(ModelConfig()))
    without = audit(build_msadnet(ModelConfig(enable_sam=False)))
    # branch parameters plus the classifier rows that read its 96 features
    assert with_sam.grand_total - without.grand_total == with_sam.path_total("sam") + 96 * 4


def test_report_formats():
    rep = audit(build_msadnet(ModelConfig()))
    doc = json.loads(rep.to_json())
    row = doc["layers"][0]
    assert {"layer", "kind", "closed_form", "actual"} <= set(row)
    text = rep.to_text()
    assert "100,576" in text and "184,480" in text and "83,904" in text
    assert "1,161,924" in text


def test_tampered_model_fails_strict_audit():
    m = build_msadnet(ModelConfig(enable_sam=False))
    node = m.node("b4.s1.conv3x3")
    node.params["kernel"].data = np.zeros((1,) + node.params["kernel"].shape[1:], np.float32)
    with pytest.raises(AuditError, match="b4.s1.conv3x3"):
        audit(m)
    assert not audit(m, strict=False).ok


widths = st.integers(1, 12)


@settings(max_examples=8, deadline=None)
@given(
    blocks=st.tuples(widths, widths, widths),
    d1=st.tuples(*[widths] * 6),
    d2=st.tuples(*[widths] * 6),
    sam=st.integers(1, 12),
    enable_sam=st.booleans(),
    plain=st.booleans(),
    skip=st.booleans(),
    tap=st.integers(0, 5),
    k=st.integers(2, 6),
    ch=st.sampled_from([1, 3]),
)
def test_randomized_configs_audit(blocks, d1, d2, sam, enable_sam, plain, skip, tap, k, ch):
    c = ModelConfig(
        input_size=112,
        input_channels=ch,
        num_classes=k,
        block_filters=blocks,
        dense1_plan=d1,
        dense2_plan=d2,
        sam_filters=sam,
        enable_sam=enable_sam,
        sam_uses_plain_conv5x5=plain and enable_sam,
        enable_skip1=skip,
        sam_tap_stage=tap,
    )
    rep = audit(build_msadnet(c))
    assert all(e.closed_form == e.actual for e in rep.entries)
    assert rep.grand_total == expected_total(c)
