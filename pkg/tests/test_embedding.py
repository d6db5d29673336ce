import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from lobforge.book import SnapshotSeries
from lobforge.embedding import (EmbedConfig, GlobalStats, bin_widths, embed_series, embed_snapshot,
                                export_frame_png, merge_frames, merge_stacked, scale_prices,
                                scale_quantities, stack_frames, unmerge)
from lobforge.errors import ConfigError, MissingStats, OutOfRange, ShapeMismatch, ZeroVariance

from conftest import make_snapshot, random_snapshot


def test_price_scaling_hand_case():
    s = make_snapshot(mid=100.0, depth=3, tick=0.1, half_spread=0.1)
    a, b = scale_prices(s)
    # asks 100.1, 100.2, 100.3 around mid 100 -> 1/3, 2/3, 1
    np.testing.assert_allclose(a, [1 / 3, 2 / 3, 1.0], rtol=1e-12)
    np.testing.assert_allclose(b, [1 / 3, 2 / 3, 1.0], rtol=1e-12)
    assert a[-1] == 1.0 and b[-1] == 1.0


def test_domain_scaling_endpoints_and_flat_side():
    q = np.array([3.0, 1.0, 2.0])
    np.testing.assert_array_equal(scale_quantities(q, "minmax_domain"), [1.0, 0.0, 0.5])
    np.testing.assert_array_equal(scale_quantities(np.full(4, 2.0), "minmax_domain"), np.zeros(4))


def test_global_and_zscore_need_stats():
    q = np.array([1.0, 2.0])
    with pytest.raises(MissingStats):
        scale_quantities(q, "zscore")
    with pytest.raises(ZeroVariance):
        scale_quantities(q, "zscore", GlobalStats(0, 1, 1, 0))
    with pytest.raises(ZeroVariance):
        scale_quantities(q, "minmax_global", GlobalStats(1, 1, 1, 1))
    np.testing.assert_allclose(scale_quantities(q, "zscore", GlobalStats(0, 4, 1.5, 0.5)), [-1, 1])
    np.testing.assert_allclose(scale_quantities(q, "minmax_global", GlobalStats(0, 4, 0, 1)), [0.25, 0.5])


def test_bin_widths_repeat_last_gap():
    np.testing.assert_allclose(bin_widths(np.array([0.25, 0.5, 1.0])), [0.25, 0.5, 0.5])
    np.testing.assert_array_equal(bin_widths(np.array([1.0])), [0.0])


def test_f8_columns_and_stats_requirement():
    s = make_snapshot(depth=4, qty=(np.array([1.0, 2, 3, 4]), np.array([4.0, 3, 2, 1])))
    with pytest.raises(MissingStats):
        embed_snapshot(s, EmbedConfig(feature_set="F8"))
    cfg = EmbedConfig(feature_set="F8").with_stats("TEST", GlobalStats(0.0, 8.0, 2.5, 1.0))
    f = embed_snapshot(s, cfg).data
    assert f.shape == (4, 8)
    np.testing.assert_allclose(f[:, 4], 255 * np.array([1, 2, 3, 4]) / 8)
    np.testing.assert_allclose(f[:, 5], 255 * bin_widths(scale_prices(s)[0]))


def test_config_validation_and_meta_round_trip():
    with pytest.raises(ConfigError):
        EmbedConfig(volume_scaling="log")
    cfg = EmbedConfig("zscore", "F8").with_stats("X", GlobalStats(0, 1, 0.5, 0.2))
    assert EmbedConfig.from_meta(cfg.to_meta()) == cfg


def test_series_embedding_matches_per_snapshot():
    rng = np.random.default_rng(3)
    snaps = [random_snapshot(rng, depth=6, ts=t) for t in range(5)]
    series = SnapshotSeries("TEST", snaps)
    cfg = EmbedConfig()
    batch = embed_series(series, cfg)
    for t, s in enumerate(snaps):
        np.testing.assert_array_equal(batch[t], embed_snapshot(s, cfg).data)


def test_merge_layout_and_unmerge():
    stacked = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)  # L=2, D=3, C=4
    merged = merge_stacked(stacked)
    assert merged.shape == (3, 8)
    np.testing.assert_array_equal(merged[:, 4:8], stacked[1])
    np.testing.assert_array_equal(unmerge(merged, 4), stacked)


def test_full_size_shapes():
    frames = [np.zeros((50, 4))] * 30
    assert stack_frames(frames).shape == (30, 50, 4)
    assert merge_frames(frames).shape == (50, 120)
    with pytest.raises(ShapeMismatch):
        stack_frames([np.zeros((50, 4)), np.zeros((49, 4))])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 10), st.integers(1, 8))
def test_merge_unmerge_property(L, D, C):
    x = np.random.default_rng(L * 100 + D * 10 + C).standard_normal((L, D, C))
    m = merge_stacked(x)
    for j in range(L):
        for c in range(C):
            assert (m[:, j * C + c] == x[j, :, c]).all()
    assert (unmerge(m, C) == x).all()


def test_png_export(tmp_path):
    img = np.array([[0.0, 127.5, 255.0], [1.5, 2.5, 254.4]])
    export_frame_png(img, tmp_path / "f.png", metadata={"seed": 1})
    back = np.asarray(Image.open(tmp_path / "f.png"))
    np.testing.assert_array_equal(back, [[0, 128, 255], [2, 2, 254]])  # round half to even
    assert '"seed": 1' in Image.open(tmp_path / "f.png").text["lobforge"]
    with pytest.raises(OutOfRange):
        export_frame_png(img + 1.0, tmp_path / "g.png")
    export_frame_png(img + 1.0, tmp_path / "g.png", clamp=True)
