"""Feature-extractor structure, stride arithmetic, and weight import."""

import numpy as np
import pytest

from s2fpn import Tensor, no_grad
from s2fpn.analysis import count_params
from s2fpn.backbone import build_backbone, import_weights
from s2fpn.errors import ConfigError, ShapeError
from s2fpn.serialize import save_model, write_checkpoint


def forward(bb, h, w, seed=0):
    x = Tensor(np.random.default_rng(seed).standard_normal((1, 3, h, w)).astype(np.float32))
    with no_grad():
        return bb(x)


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError, match="unknown backbone"):
        build_backbone("r50")


def test_r18_parameter_total_near_11_2m():
    bb = build_backbone("r18")
    total = count_params(bb).total_params
    assert abs(total - 11.2e6) / 11.2e6 < 0.02


def test_r34_block_counts():
    bb = build_backbone("r34")
    assert bb.block_counts == (3, 4, 6, 3)
    assert [getattr(bb, f"layer{i}").count for i in range(1, 5)] == [3, 4, 6, 3]


def test_strides_per_variant():
    assert build_backbone("r18").feature_strides == (2, 4, 8, 16, 32)
    assert build_backbone("r34").feature_strides == (2, 4, 8, 16, 32)
    assert build_backbone("r34m").feature_strides == (2, 4, 4, 8, 16)


@pytest.mark.parametrize("variant,size", [("r18", (64, 96)), ("r18", (96, 160)), ("r34m", (64, 128))])
def test_stride_arithmetic(variant, size):
    bb = build_backbone(variant).eval()
    h, w = size
    feats = forward(bb, h, w)
    widths = (64, 64, 128, 256, 512)
    for f, stride, c in zip(feats, bb.feature_strides, widths):
        assert f.shape == (1, c, h // stride, w // stride)


def test_r34m_f5_doubles_r34():
    f34 = forward(build_backbone("r34").eval(), 64, 128)
    f34m = forward(build_backbone("r34m").eval(), 64, 128)
    assert f34m.f5.shape[2] == 2 * f34.f5.shape[2]
    assert f34m.f5.shape[3] == 2 * f34.f5.shape[3]
    for name in ("f3", "f4", "f5"):
        a, b = getattr(f34, name), getattr(f34m, name)
        assert b.shape[2] == 2 * a.shape[2] and b.shape[3] == 2 * a.shape[3]


def test_indivisible_input_names_requirement():
    bb = build_backbone("r18")
    with pytest.raises(ShapeError, match="divisible by 32"):
        forward(bb, 60, 128)
    with pytest.raises(ShapeError, match="divisible by 16"):
        forward(build_backbone("r34m"), 56, 120)


def test_fresh_model_eval_zero_input_finite():
    bb = build_backbone("r18").eval()
    x = Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32))
    with no_grad():
        feats = bb(x)
    for f in feats:
        assert np.all(np.isfinite(f.data))


def test_parameter_counts_match_closed_form():
    bb = build_backbone("r18")
    per_stage = {}
    for name, p in bb.named_parameters():
        group = name.split(".")[0]
        per_stage[group] = per_stage.get(group, 0) + p.size

    def block(cin, cout, downsample):
        convs = cout * cin * 9 + cout * cout * 9
        bns = 4 * cout
        if downsample:
            convs += cout * cin
            bns += 2 * cout
        return convs + bns

    assert per_stage["stem_conv"] == 64 * 3 * 49
    assert per_stage["stem_bn"] == 128
    assert per_stage["layer1"] == 2 * block(64, 64, False)
    assert per_stage["layer2"] == block(64, 128, True) + block(128, 128, False)
    assert per_stage["layer3"] == block(128, 256, True) + block(256, 256, False)
    assert per_stage["layer4"] == block(256, 512, True) + block(512, 512, False)


def test_r34_and_r34m_counts_identical():
    assert count_params(build_backbone("r34")).total_params == count_params(
        build_backbone("r34m")
    ).total_params


class TestImportWeights:
    def test_round_trip_bit_identical(self, tmp_path):
        bb = build_backbone("r18")
        bb.assign_parameter_names()
        before = forward(bb.eval(), 32, 32, seed=3).f5.data.copy()
        path = tmp_path / "bb.ckpt"
        save_model(path, bb)
        other = build_backbone("r18")
        count, missing, unexpected = import_weights(other, path)
        assert count == len(list(other.named_parameters())) + len(list(other.named_buffers()))
        assert not missing and not unexpected
        after = forward(other.eval(), 32, 32, seed=3).f5.data
        assert np.array_equal(before, after)

    def test_missing_stage_reported(self, tmp_path):
        bb = build_backbone("r18")
        entries = {k: v for k, v in bb.state_dict().items() if not k.startswith("layer4")}
        path = tmp_path / "partial.ckpt"
        write_checkpoint(path, entries)
        count, missing, unexpected = import_weights(build_backbone("r18"), path)
        assert count == len(entries)
        assert missing and all(name.startswith("layer4") for name in missing)

    def test_transposed_weight_is_named_error(self, tmp_path):
        bb = build_backbone("r18")
        entries = dict(bb.state_dict())
        entries["layer2.0.down_conv.weight"] = entries["layer2.0.down_conv.weight"].transpose(
            1, 0, 2, 3
        ).copy()
        path = tmp_path / "bad.ckpt"
        write_checkpoint(path, entries)
        with pytest.raises(ShapeError, match="layer2.0.down_conv.weight"):
            import_weights(build_backbone("r18"), path)
