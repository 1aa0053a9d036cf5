"""Decoding-complexity accounting tests."""

import pytest

from reuse_inr.errors import ConfigurationError
from reuse_inr.macs import count_macs
from reuse_inr.network import Granularity, NetworkConfig, ReuseMode

FULL_SCALE_GMACS_PER_FRAME = 181.89e9

ELIGIBLE = (True, True, True, False)


def mirror(multiplier=1, mask=ELIGIBLE, gran=Granularity.CONVNEXT_BLOCK,
           mode=ReuseMode.DEEPEN):
    cfg = NetworkConfig.paper_mirror_1080p()
    if multiplier == 1 and mode == ReuseMode.DEEPEN:
        return cfg
    return cfg.with_reuse(mode=mode, granularity=gran, multiplier=multiplier,
                          location_mask=mask)


class TestFullScaleMirror:
    def test_per_frame_within_ten_percent_of_published_complexity(self):
        total = count_macs(mirror())
        per_frame = total / 240
        assert abs(per_frame - FULL_SCALE_GMACS_PER_FRAME) / FULL_SCALE_GMACS_PER_FRAME < 0.10

    def test_reuse_increments_exactly_equal(self):
        m1 = count_macs(mirror(1, mode=ReuseMode.DEEPEN))
        m2 = count_macs(mirror(2))
        m3 = count_macs(mirror(3))
        assert m2 - m1 == m3 - m2
        assert m2 - m1 > 0

    def test_location_order_shallow_medium_deep(self):
        def masked(b):
            mask = tuple(i == b for i in range(4))
            return count_macs(mirror(2, mask=mask))

        shallow, medium, deep = masked(0), masked(1), masked(2)
        assert shallow < medium <= deep


class TestProperties:
    def test_linear_in_frame_count(self):
        cfg = NetworkConfig.desk_default()
        assert count_macs(cfg, frames=32) == 2 * count_macs(cfg, frames=16)

    def test_linear_in_multiplier_on_masked_blocks(self):
        cfg = NetworkConfig.desk_default()
        base = count_macs(cfg)
        deltas = [
            count_macs(cfg.with_reuse(mode=ReuseMode.DEEPEN, multiplier=m)) - base
            for m in (2, 3, 4)
        ]
        assert deltas[1] - deltas[0] == deltas[0]
        assert deltas[2] - deltas[1] == deltas[0]

    def test_additive_over_blocks(self):
        # masking one block at a time sums to masking all of them
        cfg = NetworkConfig.desk_default()
        base = count_macs(cfg)
        total_delta = count_macs(cfg.with_reuse(mode=ReuseMode.DEEPEN, multiplier=2)) - base
        per_block = sum(
            count_macs(cfg.with_reuse(mode=ReuseMode.DEEPEN, multiplier=2,
                                      location_mask=tuple(i == b for i in range(4))))
            - base
            for b in range(3)
        )
        assert per_block == total_delta

    def test_granularities_ordered(self):
        # conv-layer repeats cost least, whole-block repeats cost most
        cfg = NetworkConfig.desk_default()
        costs = {
            gran: count_macs(cfg.with_reuse(mode=ReuseMode.DEEPEN, multiplier=2,
                                            granularity=gran))
            for gran in Granularity
        }
        assert (costs[Granularity.CONV_LAYER]
                < costs[Granularity.CONVNEXT_BLOCK]
                <= costs[Granularity.HINERV_BLOCK])

    def test_widen_scales_only_linears(self):
        cfg = NetworkConfig.desk_default()
        base = count_macs(cfg)
        widen = count_macs(cfg.with_reuse(mode=ReuseMode.WIDEN, multiplier=2))
        deepen = count_macs(cfg.with_reuse(mode=ReuseMode.DEEPEN, multiplier=2))
        assert base < widen < deepen

    def test_multiplier_one_matches_none(self):
        cfg = NetworkConfig.desk_default()
        assert count_macs(cfg.with_reuse(mode=ReuseMode.DEEPEN, multiplier=1)) == count_macs(cfg)

    def test_invalid_frame_size(self):
        with pytest.raises(ConfigurationError):
            count_macs(NetworkConfig.desk_default(), height=30)

    def test_returns_exact_int(self):
        assert isinstance(count_macs(NetworkConfig.desk_default()), int)
