"""Toy grammar, codecs, and the contraction property of the oracle denoiser."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosaic.backend import Condition
from mosaic.grids import LatentGrid, PixelImage
from mosaic.oracle import (
    IdentityCodec,
    OracleBackend,
    PoolingCodec,
    ToyEditOp,
    apply_toy_op,
    make_oracle_backend,
    parse_toy_instruction,
    resolve_target,
)
from mosaic.schedule import euler_step, make_time_grid


def flat_image(color, h=8, w=8):
    vals = np.empty((h, w, 3), dtype=np.float64)
    vals[:, :, :] = color
    return PixelImage(vals)


class TestParseToyInstruction:
    def test_set_color_with_noun(self):
        ops = parse_toy_instruction("set_color the left square to (0.9, 0.1, 0.1)")
        assert len(ops) == 1
        op = ops[0]
        assert op.kind == "set_color"
        assert op.noun == "left square"
        assert op.color == (0.9, 0.1, 0.1)

    def test_set_color_without_noun(self):
        (op,) = parse_toy_instruction("set_color to (0, 0.5, 1)")
        assert op.kind == "set_color"
        assert op.noun is None
        assert op.color == (0.0, 0.5, 1.0)

    def test_remove(self):
        (op,) = parse_toy_instruction("remove the middle cup")
        assert op.kind == "remove"
        assert op.noun == "middle cup"

    def test_replace_with_pattern(self):
        (op,) = parse_toy_instruction("replace the lamp with pattern checker")
        assert op.kind == "replace_with_constant_pattern"
        assert op.pattern == "checker"

    def test_noop(self):
        (op,) = parse_toy_instruction("noop")
        assert op.kind == "noop"

    def test_composite_clause_split(self):
        ops = parse_toy_instruction(
            "set_color the a to (1, 0, 0); remove the b; noop"
        )
        assert [op.kind for op in ops] == ["set_color", "remove", "noop"]

    def test_case_insensitive(self):
        (op,) = parse_toy_instruction("Set_Color the Box TO (0.2, 0.2, 0.2)")
        assert op.kind == "set_color"

    @pytest.mark.parametrize(
        "bad",
        [
            "",
            "   ",
            "paint the square red",
            "set_color the square to (1, 0)",
            "set_color the square to (2, 0, 0)",
            "set_color the square to (a, b, c)",
            "replace the square with pattern plaid",
            "set_color to (1,0,0);; remove",
        ],
    )
    def test_rejects_malformed(self, bad):
        with pytest.raises(ValueError):
            parse_toy_instruction(bad)

    def test_unknown_kind_rejected_at_construction(self):
        with pytest.raises(ValueError, match="unknown toy op kind"):
            ToyEditOp(kind="rotate")


class TestApplyToyOp:
    def test_set_color_fills_canvas(self):
        base = flat_image((0.3, 0.3, 0.3))
        out = apply_toy_op(base, ToyEditOp(kind="set_color", color=(0.9, 0.1, 0.1)))
        assert np.all(out.values == np.array([0.9, 0.1, 0.1]))

    def test_noop_preserves_values(self):
        base = flat_image((0.2, 0.4, 0.6))
        out = apply_toy_op(base, ToyEditOp(kind="noop"))
        np.testing.assert_array_equal(out.values, base.values)

    def test_remove_fills_with_border_mean(self):
        vals = np.zeros((6, 6, 3), dtype=np.float64)
        vals[:, :, :] = 0.5
        vals[2:4, 2:4, :] = 1.0  # interior blob should not affect the ring mean
        out = apply_toy_op(PixelImage(vals), ToyEditOp(kind="remove"))
        np.testing.assert_allclose(out.values, 0.5)

    def test_replace_checker_alternates(self):
        base = flat_image((0.0, 0.0, 0.0), h=4, w=4)
        out = apply_toy_op(
            base,
            ToyEditOp(kind="replace_with_constant_pattern", pattern="checker"),
        )
        assert out.values[0, 0, 0] == pytest.approx(0.25)
        assert out.values[0, 2, 0] == pytest.approx(0.75)
        assert out.values[2, 0, 0] == pytest.approx(0.75)
        assert set(np.unique(out.values)) == {0.25, 0.75}

    def test_replace_stripes_varies_by_row_only(self):
        base = flat_image((0.0, 0.0, 0.0), h=4, w=6)
        out = apply_toy_op(
            base,
            ToyEditOp(kind="replace_with_constant_pattern", pattern="stripes"),
        )
        for row in range(4):
            assert len(np.unique(out.values[row])) == 1
        assert out.values[0, 0, 0] != out.values[2, 0, 0]


class TestResolveTarget:
    def test_applies_first_clause_only(self):
        base = flat_image((0.5, 0.5, 0.5))
        cond = Condition(
            image=base,
            instruction="set_color the a to (1, 0, 0); set_color the b to (0, 1, 0)",
        )
        out = resolve_target(cond)
        assert np.all(out.values == np.array([1.0, 0.0, 0.0]))

    def test_ignores_region_noun(self):
        # The weak resolver edits the whole canvas regardless of the noun.
        base = flat_image((0.5, 0.5, 0.5))
        cond = Condition(image=base, instruction="set_color the left half to (0, 0, 1)")
        out = resolve_target(cond)
        assert np.all(out.values == np.array([0.0, 0.0, 1.0]))

    def test_explicit_base_overrides_condition_image(self):
        cond = Condition(image=flat_image((0.5, 0.5, 0.5), h=8, w=8), instruction="noop")
        alt = flat_image((0.1, 0.2, 0.3), h=4, w=4)
        out = resolve_target(cond, base=alt)
        assert out.values.shape == (4, 4, 3)
        np.testing.assert_array_equal(out.values, alt.values)


class TestCodecs:
    def test_identity_round_trip_exact(self):
        rng = np.random.default_rng(0)
        img = PixelImage(rng.uniform(size=(6, 10, 3)))
        codec = IdentityCodec()
        lat = codec.encode(img)
        assert lat.shape == (3, 6, 10)
        back = codec.decode(lat)
        np.testing.assert_array_equal(back.values, img.values)

    def test_identity_decode_clips(self):
        out = IdentityCodec().decode(LatentGrid(np.full((3, 2, 2), 1.7)))
        assert np.all(out.values == 1.0)

    def test_pooling_halves_dims(self):
        img = PixelImage(np.random.default_rng(1).uniform(size=(8, 12, 3)))
        lat = PoolingCodec().encode(img)
        assert lat.shape == (3, 4, 6)

    def test_pooling_mean_then_nearest(self):
        vals = np.zeros((2, 2, 3), dtype=np.float64)
        vals[0, 0, :] = 1.0
        codec = PoolingCodec()
        lat = codec.encode(PixelImage(vals))
        np.testing.assert_allclose(lat.values, 0.25)
        up = codec.decode(lat)
        np.testing.assert_allclose(up.values, 0.25)

    def test_pooling_rejects_odd_dims(self):
        with pytest.raises(ValueError, match="even"):
            PoolingCodec().encode(PixelImage(np.zeros((3, 4, 3))))

    def test_pooling_round_trip_exact_on_constant_blocks(self):
        rng = np.random.default_rng(2)
        coarse = rng.uniform(size=(3, 3, 3))
        fine = np.repeat(np.repeat(coarse, 2, axis=0), 2, axis=1)
        codec = PoolingCodec()
        back = codec.decode(codec.encode(PixelImage(fine)))
        np.testing.assert_allclose(back.values, fine, atol=1e-12)


class TestOracleBackend:
    def test_descriptor_names_codec(self):
        assert make_oracle_backend().descriptor() == {
            "vae_factor": 1,
            "patch": 1,
            "name": "toy-oracle-identity",
        }
        desc = make_oracle_backend("pooling", patch=2).descriptor()
        assert desc["vae_factor"] == 2
        assert desc["patch"] == 2

    def test_unknown_codec_rejected(self):
        with pytest.raises(ValueError, match="unknown codec"):
            make_oracle_backend("jpeg")

    def test_velocity_points_at_target(self):
        backend = make_oracle_backend()
        base = flat_image((0.5, 0.5, 0.5), h=4, w=4)
        cond = Condition(image=base, instruction="set_color to (1, 0, 0)")
        z = backend.encode(base)
        v = backend.predict_velocity(z, 1.0, cond)
        target = backend.encode(resolve_target(cond))
        np.testing.assert_allclose(v.values, z.values - target.values)

    def test_shape_mismatch_rejected(self):
        backend = make_oracle_backend()
        cond = Condition(image=flat_image((0.5,) * 3, h=4, w=4), instruction="noop")
        with pytest.raises(ValueError, match="does not match"):
            backend.predict_velocity(LatentGrid(np.zeros((3, 8, 8))), 1.0, cond)

    def test_full_schedule_lands_on_target(self):
        backend = make_oracle_backend()
        rng = np.random.default_rng(3)
        base = PixelImage(rng.uniform(size=(6, 6, 3)))
        cond = Condition(image=base, instruction="set_color to (0.9, 0.1, 0.1)")
        times = make_time_grid(50).times
        z = LatentGrid(rng.standard_normal((3, 6, 6)))
        for i in range(50):
            v = backend.predict_velocity(z, times[i], cond)
            z = euler_step(z, v, times[i] - times[i + 1])
        target = backend.encode(resolve_target(cond))
        assert np.max(np.abs(z.values - target.values)) <= 1e-9

    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(0, 2**31 - 1),
        steps=st.sampled_from([1, 2, 5, 13, 50]),
        codec=st.sampled_from(["identity", "pooling"]),
    )
    def test_convergence_from_any_start(self, seed, steps, codec):
        backend = make_oracle_backend(codec)
        rng = np.random.default_rng(seed)
        base = PixelImage(rng.uniform(size=(8, 8, 3)))
        cond = Condition(image=base, instruction="replace with pattern stripes")
        times = make_time_grid(steps).times
        z = LatentGrid(rng.standard_normal(backend.encode(base).shape))
        for i in range(steps):
            v = backend.predict_velocity(z, times[i], cond)
            z = euler_step(z, v, times[i] - times[i + 1])
        target = backend.encode(resolve_target(cond))
        assert np.max(np.abs(z.values - target.values)) <= 1e-9

    def test_custom_resolver_wins(self):
        fixed = flat_image((0.2, 0.4, 0.8), h=4, w=4)
        backend = OracleBackend(resolver=lambda cond: fixed)
        cond = Condition(image=flat_image((0.0,) * 3, h=4, w=4), instruction="noop")
        z = backend.encode(flat_image((1.0,) * 3, h=4, w=4))
        v = backend.predict_velocity(z, 1.0, cond)
        np.testing.assert_allclose(
            v.values, z.values - backend.encode(fixed).values
        )
