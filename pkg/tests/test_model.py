import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SMALL_ANCHORS, small_network
from qfacedet.detection import AnchorSet, default_anchors
from qfacedet.fixedpoint import QFormat
from qfacedet.model import (
    MIB,
    GraphBuilder,
    ModelConfig,
    ModelFormatError,
    ModelGraph,
    build_detector,
    cast_storage,
    deserialize_model,
    load_model,
    make_divisible,
    parameter_count,
    save_model,
    serialize_model,
    storage_size,
)
from qfacedet.quantizer import QuantPlan, quantize_model


def assert_same_graph(a: ModelGraph, b: ModelGraph):
    assert a.config == b.config
    assert a.layers == b.layers
    assert (a.storage_format, a.weight_fmt, a.activation_fmt) == (b.storage_format, b.weight_fmt, b.activation_fmt)
    assert sorted(a.weights) == sorted(b.weights)
    for k in a.weights:
        assert a.weights[k].dtype == b.weights[k].dtype, k
        assert np.array_equal(a.weights[k], b.weights[k]), k


@pytest.fixture(scope="module")
def graphs():
    return {
        s: build_detector(ModelConfig(alpha=1.0, out_strategy=s, input_hw=(500, 500)))
        for s in ("OutA", "OutB", "OutC")
    }


class TestShapes:
    def test_breakpoints_at_500(self, graphs):
        shapes = graphs["OutC"].infer_shapes()
        assert shapes[graphs["OutC"].tagged("breakpoint_A").name] == (32, 32, 576)
        assert shapes[graphs["OutC"].tagged("breakpoint_B").name] == (16, 16, 1280)

    def test_outc_concat(self, graphs):
        g = graphs["OutC"]
        shapes = g.infer_shapes()
        assert shapes[g.head.inputs[0]] == (32, 32, 1856)
        assert shapes[g.head.name] == (32, 32, 125)

    def test_outb_head(self, graphs):
        g = graphs["OutB"]
        assert g.infer_shapes()[g.head.name] == (16, 16, 125)
        assert g.head_stride == 32

    def test_outa_at_224(self, graphs):
        g = graphs["OutA"]
        assert g.infer_shapes((224, 224))[g.head.name] == (14, 14, 125)
        assert g.head_stride == 16

    @pytest.mark.parametrize("strategy", ["OutA", "OutB", "OutC"])
    @pytest.mark.parametrize("n_anchors", [1, 3, 25])
    def test_head_channel_law(self, strategy, n_anchors):
        anchors = AnchorSet.from_sizes([(16 + i, 16 + i) for i in range(n_anchors)])
        g = build_detector(ModelConfig(alpha=0.35, out_strategy=strategy, anchors=anchors))
        assert g.head.channels == 5 * n_anchors
        assert g.weights["head/bias"].shape == (5 * n_anchors,)

    def test_forward_matches_inferred_shape(self):
        g = build_detector(ModelConfig(alpha=0.35, out_strategy="OutC", input_hw=(64, 64)))
        y = g.forward(np.random.default_rng(0).uniform(0, 1, (1, 64, 64, 3)))
        assert y.shape == (1,) + g.infer_shapes()[g.head.name]
        assert np.all(np.isfinite(y))

    def test_odd_input_crops_upsampled_branch(self):
        g = build_detector(ModelConfig(alpha=0.35, out_strategy="OutC", input_hw=(72, 72)))
        shapes = g.infer_shapes()
        assert shapes[g.head.name][:2] == shapes[g.tagged("breakpoint_A").name][:2]
        assert g.forward(np.zeros((1, 72, 72, 3))).shape[1:3] == shapes[g.head.name][:2]

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            ModelConfig(out_strategy="OutD")
        with pytest.raises(ValueError):
            ModelConfig(alpha=0.0)


class TestCounts:
    def test_single_conv(self):
        b = GraphBuilder(2)
        b.conv("input", 3, 1)
        assert parameter_count(b.build()) == 6

    def test_backbone_has_no_bias(self, graphs):
        biases = [k for k in graphs["OutC"].weights if k.endswith("/bias")]
        assert biases == ["head/bias"]

    def test_make_divisible(self):
        assert make_divisible(32 * 0.35) == 8  # 11.2 is nearer 8 than 16
        assert make_divisible(3) == 8
        assert make_divisible(96 * 0.5) == 48
        assert make_divisible(20) == 24

    def test_alpha_monotone(self):
        counts = [parameter_count(build_detector(ModelConfig(alpha=a))) for a in (0.25, 0.35, 0.5, 0.75, 1.0)]
        assert counts == sorted(counts)

    def test_alpha_one_is_unscaled(self, graphs):
        shapes = graphs["OutB"].infer_shapes()
        assert shapes["Conv1"][2] == 32 and shapes["block_16_project"][2] == 320

    def test_strategies_nest(self, graphs):
        a, b, c = (parameter_count(graphs[s]) for s in ("OutA", "OutB", "OutC"))
        assert a < b < c


class TestStorage:
    def test_bytes_per_format(self, graphs):
        g = graphs["OutA"]
        n = parameter_count(g)
        assert storage_size(g, "fp32") == 4 * n
        assert storage_size(g, "fp16") == 2 * n
        assert storage_size(g, QFormat(6, 9)) == 2 * n
        assert storage_size(g, 16) == storage_size(g, "fp16")

    def test_reference_arithmetic(self):
        # 1.37M weights in binary megabytes
        assert round(1.37e6 * 4 / MIB, 2) == 5.23
        assert round(1.37e6 * 2 / MIB, 2) == 2.61

    def test_zero_parameters(self):
        g = GraphBuilder(1).build()
        assert storage_size(g, "fp32") == 0


class TestCast:
    def test_fp16_exact_values(self):
        g = small_network(0)
        vals = np.array([0.0, 0.5, -0.5, 1.0, -1.0], dtype=np.float32)
        weights = {k: np.resize(vals, v.shape).astype(np.float32) for k, v in g.weights.items()}
        g = g.with_weights(weights)
        h = cast_storage(g, "fp16")
        assert h.storage_format == "fp16"
        for k in g.weights:
            assert np.array_equal(h.float_weight(k), g.weights[k])

    def test_fp16_subnormal(self):
        b = GraphBuilder(1)
        b.conv("input", 1, 1)
        g = b.build()
        g = g.with_weights({"conv0/kernel": np.full((1, 1, 1, 1), 1e-8, dtype=np.float32)})
        v = float(cast_storage(g, "fp16").float_weight("conv0/kernel")[0, 0, 0, 0])
        # smallest half subnormal is 2**-24, so the rounding step there is 2**-24
        assert abs(v - 1e-8) <= 2.0 ** -25
        assert v == float(np.float16(1e-8))

    def test_qformat_saturates_large_weight(self):
        b = GraphBuilder(1)
        b.conv("input", 1, 1)
        g = b.build().with_weights({"conv0/kernel": np.full((1, 1, 1, 1), 25.0, dtype=np.float32)})
        q69 = cast_storage(g, QFormat(6, 9))
        assert float(q69.float_weight("conv0/kernel")[0, 0, 0, 0]) == 25.0
        q411 = cast_storage(g, QFormat(4, 11))
        assert q411.weights["conv0/kernel"].item() == QFormat(4, 11).int_max
        q510 = cast_storage(g, QFormat(5, 10))
        assert float(q510.float_weight("conv0/kernel")[0, 0, 0, 0]) == 25.0
        with pytest.raises(OverflowError):
            cast_storage(g, QFormat(4, 11), saturate=False)

    def test_needs_fp32_source(self):
        with pytest.raises(ValueError):
            cast_storage(cast_storage(small_network(0), "fp16"), "fp16")


class TestSerialization:
    def test_round_trip_fp32(self, tmp_path):
        g = build_detector(ModelConfig(alpha=0.35, out_strategy="OutC"), seed=5)
        save_model(g, tmp_path / "m.qdm")
        assert_same_graph(g, load_model(tmp_path / "m.qdm"))

    def test_round_trip_fp16_and_q(self):
        g = small_network(2)
        for h in (cast_storage(g, "fp16"), quantize_model(g, QuantPlan(QFormat(5, 10), QFormat(8, 7)))):
            back = deserialize_model(serialize_model(h))
            assert_same_graph(h, back)
        assert deserialize_model(serialize_model(cast_storage(g, "fp16"))).storage_format == "fp16"

    def test_same_seed_same_bytes(self):
        cfg = ModelConfig(alpha=0.35)
        assert serialize_model(build_detector(cfg, seed=3)) == serialize_model(build_detector(cfg, seed=3))
        assert serialize_model(build_detector(cfg, seed=3)) != serialize_model(build_detector(cfg, seed=4))

    def test_manifest_is_text(self):
        data = serialize_model(small_network(0))
        head = data[: data.index(b"\nend\n")].decode("ascii")
        assert head.startswith("qdm1\n")
        assert "blob head/bias <f4 10 " in head

    @pytest.mark.parametrize("cut", [5, 40, 200, -1, -100])
    def test_truncated(self, cut):
        data = serialize_model(small_network(0))
        with pytest.raises(ModelFormatError, match="byte"):
            deserialize_model(data[:cut])

    def test_version_mismatch(self):
        data = serialize_model(small_network(0))
        with pytest.raises(ModelFormatError, match="version"):
            deserialize_model(b"qdm2" + data[4:])

    def test_corrupt_record(self):
        data = serialize_model(small_network(0)).replace(b"out_strategy", b"out_strategx", 1)
        with pytest.raises(ModelFormatError, match="byte"):
            deserialize_model(data)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(["fp32", "fp16", "q"]),
           st.integers(1, 4), st.integers(1, 3))
    def test_round_trip_random_graphs(self, seed, fmt, width, n_anchors):
        rng = np.random.default_rng(seed)
        b = GraphBuilder(3, seed)
        h = b.conv("input", 8 * width, 3, int(rng.integers(1, 3)))
        h = b.relu6(h)
        if rng.random() < 0.5:
            h = b.inverted_residual(h, int(rng.integers(1, 4)), 8 * width, 1, "blk")
        b.head(h, n_anchors)
        anchors = AnchorSet.from_sizes(rng.uniform(8, 64, (n_anchors, 2)))
        g = b.build(ModelConfig(anchors=anchors, input_hw=(16, 16))).validate()
        if fmt == "fp16":
            g = cast_storage(g, "fp16")
        elif fmt == "q":
            g = quantize_model(g, QuantPlan(QFormat(2, 13), QFormat(4, 11)))
        assert_same_graph(g, deserialize_model(serialize_model(g)))


def test_default_anchor_file():
    anchors = default_anchors()
    assert len(anchors) == 25
    sizes = anchors.sizes
    assert sizes[0, 0] == pytest.approx(16) and sizes[-1, 0] == pytest.approx(360, rel=1e-4)
    assert np.all(np.diff(sizes[:, 0]) > 0)


def test_small_anchor_model_runs():
    g = small_network(0)
    assert g.anchors == SMALL_ANCHORS
    assert g.head_map(np.zeros((1, 32, 32, 3))).grid.shape == (8, 8, 10)
