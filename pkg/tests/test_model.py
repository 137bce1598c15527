import struct

import numpy as np
import pytest

from gvt.checkpoint import decode, encode, load_checkpoint, load_into, save_checkpoint
from gvt.errors import ConfigError, DimensionError, FormatError
from gvt.model import (
    ModelConfig,
    build_model,
    count_params,
    default_pool_at,
    flop_estimate_gvt,
    flop_estimate_vit,
    measured_block_macs,
)
from gvt.pool import init_pool_params
from gvt.tensor import Tensor

TINY = ModelConfig(blocks=1, hidden=8, heads=2, tokens=4, pool_to=2, num_classes=2, image_size=(16, 16),
                   in_channels=1, embed_hidden=2, groups=1, strides=(2, 4))


def _images(cfg, batch=2, seed=0):
    h, w = cfg.image_size
    return Tensor(np.random.default_rng(seed).random((batch, cfg.in_channels, h, w)).astype(np.float32))


class TestBuild:
    def test_smallest_model(self):
        m = build_model(TINY)
        assert m.pool is None
        assert m(_images(TINY, 1)).shape == (1, 2)
        assert m(Tensor(np.zeros((1, 16, 16), dtype=np.float32))).shape == (2,)

    def test_same_seed_bitwise_identical(self):
        a = build_model(ModelConfig(seed=3)).named_parameters()
        b = build_model(ModelConfig(seed=3)).named_parameters()
        assert list(a) == list(b)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_different_seed_differs(self):
        a = build_model(ModelConfig(seed=1)).named_parameters()
        b = build_model(ModelConfig(seed=2)).named_parameters()
        assert any(not np.array_equal(a[k].data, b[k].data) for k in a)

    def test_seven_block_config_forward(self):
        cfg = ModelConfig(blocks=7, hidden=64, heads=8, tokens=64, pool_to=16)
        assert cfg.resolved_pool_at == 5
        m = build_model(cfg)
        logits, states = m.forward_tokens(_images(cfg, 1), return_states=True)
        assert logits.shape == (1, 16, 64)
        assert [s.S.shape[-1] for s in states] == [64] * 5 + [16] * 2
        assert m(_images(cfg, 1)).shape == (1, 10)

    def test_parameter_names(self):
        names = list(build_model(ModelConfig(blocks=2)).named_parameters())
        assert names[:4] == ["embed.conv1.weight", "embed.conv1.bias", "embed.conv2.weight", "embed.conv2.bias"]
        assert "block0.head0.wq" in names and "block1.head7.wv" in names
        assert {"block1.wh", "block1.wc", "block1.u", "block1.phi", "block1.wo", "pool.u",
                "classifier.weight", "classifier.bias"} <= set(names)
        assert len(set(names)) == len(names)

    @pytest.mark.parametrize("kw,field", [
        (dict(hidden=30, heads=8), "hidden"),
        (dict(pool_to=64), "pool_to"),
        (dict(pool_at=4), "pool_at"),
        (dict(tokens=49), "tokens"),
        (dict(heads=0), "heads"),
    ])
    def test_invalid_config_names_field(self, kw, field):
        with pytest.raises(ConfigError, match=field):
            ModelConfig(**kw)

    def test_pool_placement(self):
        assert [default_pool_at(a) for a in (2, 3, 4, 7, 10)] == [1, 3 - 1, 3, 5, 8]

    def test_forward_does_not_mutate(self):
        m = build_model(ModelConfig(blocks=2))
        before = {k: p.data.copy() for k, p in m.named_parameters().items()}
        m(_images(m.cfg))
        m.predict(_images(m.cfg))
        assert all(np.array_equal(before[k], p.data) for k, p in m.named_parameters().items())


class TestCountParams:
    def test_single_pool_matrix(self, rng):
        assert count_params({"pool.u": init_pool_params(5, 12, rng).U}) == 60

    def test_hand_enumeration(self):
        # conv1 2x1x5x5 + 2, conv2 8x2x5x5 + 8
        embed = 50 + 2 + 400 + 8
        # per head 3 x (4x4); wh 8x2; wc 2x4; u 2; phi 2x2; wo 8x8
        block = 2 * 3 * 16 + 16 + 8 + 2 + 4 + 64
        classifier = 8 * 2 + 2
        assert count_params(build_model(TINY)) == embed + block + classifier == 668

    def test_large_config_scale(self):
        n = count_params(build_model(ModelConfig(blocks=7, hidden=128, heads=8, tokens=64, num_classes=100)))
        assert abs(n - 503_000) / 503_000 <= 0.25


class TestFlops:
    def test_reference_values(self):
        assert flop_estimate_gvt(64, 64) == 2_359_296 == 9 * 64 ** 3
        assert flop_estimate_vit(64, 64) == 3_145_728 == 12 * 64 ** 3

    def test_small(self):
        assert flop_estimate_gvt(1, 1) == 9
        assert flop_estimate_vit(1, 1) == 12
        assert flop_estimate_gvt(16, 64) == 196_608 + 65_536 + 8_192 == 270_336

    @pytest.mark.parametrize("u", [1, 2, 7, 64, 100, 512])
    def test_ratio(self, u):
        assert flop_estimate_gvt(u, u) * 4 == flop_estimate_vit(u, u) * 3

    def test_gvt_cheaper_when_few_tokens(self):
        d = np.arange(1, 513)
        for n in range(1, 513):
            dd = d[d >= n]
            assert np.all(3 * n * dd ** 2 + 4 * n * n * dd + 2 * n ** 3 < 10 * n * dd ** 2 + 2 * n * n * dd)
        for n, dd in [(1, 1), (64, 64), (16, 512), (511, 512)]:
            assert flop_estimate_gvt(n, dd) < flop_estimate_vit(n, dd)

    def test_measured_macs_positive(self):
        assert measured_block_macs(16, 32, 4) > 0


class TestCheckpoint:
    def test_bit_exact_layout(self):
        w = np.array([[1.0, -2.0, 0.5]], dtype=np.float32)
        b = np.array(3.0, dtype=np.float32)
        body = b"GVT1" + struct.pack("<II", 1, 2)
        body += struct.pack("<H", 1) + b"w" + struct.pack("<B", 2) + struct.pack("<II", 1, 3)
        body += struct.pack("<3f", 1.0, -2.0, 0.5)
        body += struct.pack("<H", 2) + b"b0" + struct.pack("<B", 0) + struct.pack("<f", 3.0)
        want = body + struct.pack("<Q", sum(body) % 2 ** 64)
        assert encode({"w": w, "b0": b}) == want

    def test_roundtrip_bitwise(self, tmp_path):
        m = build_model(ModelConfig(blocks=2, seed=5))
        params = m.named_parameters()
        path = save_checkpoint(tmp_path / "m.ckpt", params)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(params)
        assert all(np.array_equal(loaded[k], params[k].data) for k in params)
        other = build_model(ModelConfig(blocks=2, seed=6))
        load_into(other.named_parameters(), loaded)
        x = _images(m.cfg)
        assert np.array_equal(m(x).data, other(x).data)
        assert encode(other.named_parameters()) == path.read_bytes()

    @pytest.mark.parametrize("mutate", [
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:20] + bytes([b[20] ^ 1]) + b[21:],
        lambda b: b[:-9] + b[-8:],
    ])
    def test_corruption_detected(self, mutate):
        buf = encode({"a": np.arange(6, dtype=np.float32).reshape(2, 3)})
        with pytest.raises(FormatError):
            decode(mutate(buf))

    def test_load_into_shape_mismatch(self):
        with pytest.raises(DimensionError):
            load_into({"a": Tensor(np.zeros(3, dtype=np.float32))}, {"a": np.zeros(4, dtype=np.float32)})
