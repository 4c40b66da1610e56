import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from colonnet.backbone import BackboneSpec, build_backbone
from colonnet.heads import (
    ColonSegOutput,
    HeadConfig,
    build_heads,
    classify,
    colonseg_forward,
    decode_outputs,
)
from colonnet.dataset import BoundingBox


def test_default_widths_on_densenet_shape():
    heads = build_heads(HeadConfig(), (7, 7, 1024))
    assert heads.classification.in_features == 50176
    assert heads.classification.mlp[1].in_features == 7 * 7 * 1024
    assert heads.detection.in_features == 50176


def test_detection_activation_alternation():
    heads = build_heads(HeadConfig(), (2, 2, 64))
    acts = [type(m).__name__ for m in heads.detection.mlp if not isinstance(m, (torch.nn.Linear, torch.nn.Flatten))]
    assert acts == ["ReLU", "ELU", "ReLU"]
    assert heads.detection.mlp[-1].out_features == 4
    assert heads.classification.mlp[-1].out_features == 1


def test_empty_widths_rejected():
    with pytest.raises(ValueError):
        HeadConfig(cls_hidden_widths=[])


def test_output_ranges():
    torch.manual_seed(0)
    heads = build_heads(HeadConfig(), (2, 2, 64))
    feats = torch.randn(16, 64, 2, 2) * 50
    p = heads.classification.prob(feats)
    b = heads.detection(feats)
    assert ((p >= 0) & (p <= 1)).all() and ((b >= 0) & (b <= 1)).all()
    assert torch.isfinite(p).all() and torch.isfinite(b).all()


def test_forward_arity_and_zero_input():
    torch.manual_seed(0)
    bb = build_backbone(BackboneSpec("tiny", 64)).eval()
    heads = build_heads(HeadConfig(), bb.feature_shape).eval()
    outs = colonseg_forward(bb, heads, torch.zeros(3, 3, 64, 64))
    assert len(outs) == 3
    for o in outs:
        assert np.isfinite(o.bleed_prob) and all(np.isfinite(o.bbox.as_tuple()))


def test_corner_sort():
    (out,) = decode_outputs([0.7], [[0.4, 0.2, 0.1, 0.6]])
    assert out.bbox.as_tuple() == pytest.approx((0.1, 0.2, 0.4, 0.6))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4))
def test_corner_sort_always_valid(raw):
    (out,) = decode_outputs([0.5], [raw])
    b = out.bbox
    assert 0 <= b.x_min < b.x_max <= 1 and 0 <= b.y_min < b.y_max <= 1


def test_classify_threshold():
    box = BoundingBox(0.1, 0.1, 0.2, 0.2)
    assert classify(ColonSegOutput(0.9, box)) == 1
    assert classify(ColonSegOutput(0.5, box), 0.5) == 1
    assert classify(ColonSegOutput(0.49, box), 0.5) == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0))
def test_threshold_equals_two_class_argmax(p):
    box = BoundingBox(0.1, 0.1, 0.2, 0.2)
    # argmax over (no-bleed, bleed) with ties going to bleed
    assert classify(ColonSegOutput(p, box)) == int(p >= 1 - p)
