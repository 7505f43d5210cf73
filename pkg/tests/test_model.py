"""Stage decomposition and structural validation."""

from convbudget.model import (Architecture, conv, max_pool, stage_of_layer,
                              stages, validate)
from convbudget.notation import parse_architecture


def arch_of(text, size=224, channels=3, name="t"):
    return parse_architecture(text, size, channels, name)


class TestStages:
    def test_model_a_three_stages(self, zoo_arch):
        views = stages(zoo_arch("A"))
        assert [v.depth for v in views] == [1, 1, 3]
        assert [v.index for v in views] == [1, 2, 3]
        assert (views[0].in_channels, views[0].out_channels) == (3, 64)
        assert (views[2].in_channels, views[2].out_channels) == (128, 256)

    def test_model_j_four_stages(self, zoo_arch):
        assert [v.depth for v in stages(zoo_arch("J"))] == [1, 4, 4, 2]

    def test_single_conv_one_stage(self):
        views = stages(arch_of("(3,16)", 8, 1))
        assert len(views) == 1 and views[0].depth == 1

    def test_trailing_pool_not_a_stage(self):
        views = stages(arch_of("(3,16) | P2/2", 8, 1))
        assert len(views) == 1

    def test_partition_covers_every_conv_exactly_once(self, zoo_arch):
        for name in ("A", "J", "F"):
            arch = zoo_arch(name)
            views = stages(arch)
            covered = [i for v in views for i in range(v.start, v.stop)]
            conv_indices = [i for i, l in enumerate(arch.layers) if l.is_conv]
            assert covered == conv_indices

    def test_stage_boundary_channels_chain(self, zoo_arch):
        views = stages(zoo_arch("J"))
        for first, second in zip(views, views[1:]):
            assert first.out_channels == second.in_channels

    def test_stage_of_layer(self, zoo_arch):
        arch = zoo_arch("A")
        assert stage_of_layer(arch, 0) == 1
        assert stage_of_layer(arch, 1) is None  # pool
        assert stage_of_layer(arch, 4) == 3


class TestValidate:
    def test_zoo_models_are_clean(self, zoo_arch):
        for name in "ABCDEFGHIJ":
            assert validate(zoo_arch(name)) == []

    def test_invalid_stride(self):
        arch = Architecture("x", 8, 1, (conv(3, 16, 0),))
        codes = {v.code for v in validate(arch)}
        assert "InvalidStride" in codes

    def test_non_positive_feature_map(self):
        arch = Architecture("x", 4, 1, (conv(7, 16),))
        violations = validate(arch)
        assert [v.code for v in violations] == ["NonPositiveFeatureMap"]
        assert violations[0].layer_index == 0

    def test_pool_with_width_flagged(self):
        from convbudget.model import LayerKind, LayerSpec
        bad = LayerSpec(LayerKind.MAX_POOL, 2, width=5, stride=2)
        arch = Architecture("x", 8, 1, (conv(3, 16), bad))
        assert "PoolCarriesWidth" in {v.code for v in validate(arch)}

    def test_groups_must_divide(self):
        arch = Architecture("x", 8, 3, (conv(3, 16, groups=2),))
        assert "GroupsDoNotDivide" in {v.code for v in validate(arch)}

    def test_no_conv_layer(self):
        arch = Architecture("x", 8, 1, (max_pool(2, 2),))
        assert "NoConvLayer" in {v.code for v in validate(arch)}

    def test_violations_are_data_not_exceptions(self):
        arch = Architecture("x", 8, 1, (conv(0, 0, 0),))
        out = validate(arch)
        assert len(out) >= 2
        assert all(str(v) for v in out)

    def test_metadata_never_affects_equality(self):
        a = Architecture("x", 8, 1, (conv(3, 16),), {"top1": "1"})
        b = Architecture("x", 8, 1, (conv(3, 16),), {"top1": "2"})
        assert a == b
        assert a.structurally_equals(b)
