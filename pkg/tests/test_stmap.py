import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bgrppg.errors import BackgroundError, InputError, PartitionError
from bgrppg.spectral import hr_from_trace
from bgrppg.stmap import (N_REGIONS, VideoClip, background_windows, build_background_stmap,
                          build_face_stmap, build_global_stmap, interpolate_to_25fps,
                          region_partition, rgb_to_yuv, yuv_to_rgb)

from conftest import uniform_clip


class TestInterpolation:
    def test_identity_at_25fps(self, rng):
        frames = rng.integers(0, 256, size=(6, 16, 16, 3), dtype=np.uint8)
        out = interpolate_to_25fps(VideoClip(frames, 25.0))
        assert np.array_equal(out.frames, frames)

    def test_30fps_60_frames_gives_50(self):
        out = interpolate_to_25fps(uniform_clip((10, 20, 30), n=60, h=16, w=16, fps=30.0))
        assert out.n_frames == 50 and out.fps == 25.0

    def test_constant_gray_stays_constant(self):
        out = interpolate_to_25fps(uniform_clip((90, 90, 90), n=20, h=16, w=16, fps=20.0))
        assert out.n_frames == 25
        assert np.all(out.frames == 90)

    def test_rejects_bad_rate(self):
        with pytest.raises(InputError):
            interpolate_to_25fps(uniform_clip((0, 0, 0), n=4, h=16, w=16, fps=5.0))


class TestYuv:
    @pytest.mark.parametrize("rgb, yuv", [
        ((0, 0, 0), (0, 128, 128)),
        ((255, 255, 255), (255, 128, 128)),
    ])
    def test_fixed_points(self, rgb, yuv):
        assert np.allclose(rgb_to_yuv(np.array(rgb, float)), yuv, atol=1e-9)

    def test_pure_red_by_hand(self):
        # Y = .299 * 255, U = 128 - .168736 * 255, V = 128 + .5 * 255 (clamped)
        y = 0.299 * 255
        u = 128 - 0.168736 * 255
        assert np.allclose(rgb_to_yuv(np.array([255.0, 0, 0])), [y, u, 255.0], atol=1e-9)
        assert np.allclose([y, u], [76.245, 84.972], atol=1e-3)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 255), min_size=3, max_size=3))
    def test_inverse(self, rgb):
        rgb = np.array(rgb)
        assert np.allclose(yuv_to_rgb(rgb_to_yuv(rgb, clamp=False)), rgb, atol=1e-9)


class TestPartition:
    def test_64_disjoint_nonempty_regions(self, partition):
        labels = partition.label_image(0, 128, 128)
        assert partition.triangles.shape == (N_REGIONS, 3)
        counts = np.bincount(labels[labels >= 0], minlength=N_REGIONS)
        assert np.all(counts > 0)
        # Pixel-set oracle: each pixel rasterised independently per triangle.
        from bgrppg.stmap import _in_triangle
        ys, xs = np.mgrid[0:128, 0:128].astype(float)
        owned = np.zeros((128, 128), int)
        for tri in partition.polygons(0):
            owned += _in_triangle(xs, ys, tri)
        # Shared-edge pixels go to exactly one region (first-come).
        assert np.array_equal(labels >= 0, owned > 0)

    def test_coincident_points_rejected(self):
        with pytest.raises(PartitionError):
            region_partition(np.full((68, 2), 10.0))

    def test_collinear_points_rejected(self):
        pts = np.stack([np.arange(68.0), 2 * np.arange(68.0)], axis=1)
        with pytest.raises(PartitionError):
            region_partition(pts)

    def test_wrong_shape(self):
        with pytest.raises(PartitionError):
            region_partition(np.zeros((10, 2)))

    def test_translation_equivariance(self, landmarks):
        a = region_partition(landmarks)
        b = region_partition(landmarks + np.array([7.0, -3.0]))
        assert np.array_equal(a.triangles, b.triangles)
        la = a.label_image(0, 128, 128)
        lb = b.label_image(0, 128, 128)
        assert np.array_equal(la[10:100, 0:110], lb[7:97, 7:117])


class TestFaceMap:
    def test_uniform_colour(self, partition):
        m = build_face_stmap(uniform_clip((120, 80, 60)), partition)
        want = rgb_to_yuv(np.array([120.0, 80, 60]))
        assert m.shape == (3, 64, 4)
        assert np.allclose(m.data, want[:, None, None])

    def test_single_region_modulation(self, partition):
        t = np.arange(320) / 25.0
        frames = np.full((320, 128, 128, 3), 100, dtype=np.uint8)
        mask = partition.label_image(0, 128, 128) == 5
        frames[:, mask, 0] = np.rint(100 + 40 * np.sin(2 * np.pi * 1.2 * t))[:, None]
        m = build_face_stmap(VideoClip(frames, 25.0), partition)
        assert m.shape == (3, 64, 320)
        assert abs(hr_from_trace(m.data[0, 5], 25.0) - 72.0) <= 60 * 25 / 2048
        others = np.delete(m.data[0], 5, axis=0)
        assert np.ptp(others, axis=1).max() == 0.0

    def test_temporal_locality(self, partition, rng):
        frames = rng.integers(0, 256, size=(5, 128, 128, 3), dtype=np.uint8)
        a = build_face_stmap(VideoClip(frames, 25.0), partition).data
        frames[2] = 255 - frames[2]
        b = build_face_stmap(VideoClip(frames, 25.0), partition).data
        changed = np.any(a != b, axis=(0, 1))
        assert changed.tolist() == [False, False, True, False, False]

    def test_luma_linearity(self, partition, rng):
        f1 = rng.integers(0, 120, size=(3, 128, 128, 3)).astype(np.uint8)
        f2 = rng.integers(0, 120, size=(3, 128, 128, 3)).astype(np.uint8)
        m1 = build_face_stmap(VideoClip(f1, 25.0), partition).data[0]
        m2 = build_face_stmap(VideoClip(f2, 25.0), partition).data[0]
        m12 = build_face_stmap(VideoClip(f1 + f2, 25.0), partition).data[0]
        assert np.allclose(m12, m1 + m2, atol=1e-9)

    def test_frame_count_mismatch(self, landmarks):
        part = region_partition(np.stack([landmarks] * 3))
        with pytest.raises(PartitionError):
            build_face_stmap(uniform_clip((1, 2, 3), n=4), part)


class TestBackground:
    def test_windows_tile_complement(self, partition):
        h = w = 128
        rects = background_windows(partition.bbox[0], h, w)
        assert len(rects) == 64
        cover = np.zeros((h, w), int)
        for y0, y1, x0, x1 in rects:
            assert y1 > y0 and x1 > x0
            cover[y0:y1, x0:x1] += 1
        x0, y0, x1, y1 = partition.bbox[0]
        inside = np.zeros((h, w), bool)
        inside[y0:y1 + 1, x0:x1 + 1] = True
        assert np.all(cover[~inside] == 1) and np.all(cover[inside] == 0)

    def test_full_frame_box_rejected(self):
        with pytest.raises(BackgroundError):
            background_windows((0, 0, 127, 127), 128, 128)

    def test_uniform_rows_constant(self, partition):
        m = build_background_stmap(uniform_clip((30, 60, 90)), partition)
        assert m.shape == (3, 64, 4)
        assert np.ptp(m.data, axis=2).max() == 0.0

    def test_global_flicker_everywhere(self, partition):
        t = np.arange(320) / 25.0
        g = np.rint(100 + 30 * np.sin(2 * np.pi * 0.9 * t)).astype(np.uint8)
        frames = np.broadcast_to(g[:, None, None, None], (320, 128, 128, 3)).copy()
        m = build_background_stmap(VideoClip(frames, 25.0), partition)
        for row in m.data[0]:
            assert abs(hr_from_trace(row, 25.0) - 54.0) <= 60 * 25 / 2048


class TestGlobal:
    def test_left_right_split(self):
        frames = np.zeros((2, 64, 96, 3), dtype=np.uint8)
        frames[:, :, :48] = 50
        frames[:, :, 48:] = 150
        m = build_global_stmap(VideoClip(frames, 25.0)).data.reshape(3, 8, 8, 2)
        assert m.shape[1:3] == (8, 8)
        assert np.allclose(m[0, :, -1] - m[0, :, 0], 100.0)

    def test_always_64_rows(self):
        m = build_global_stmap(uniform_clip((5, 5, 5), n=2, h=40, w=200))
        assert m.shape == (3, 64, 2)
        assert np.ptp(m.data, axis=(1, 2)).max() == 0

    def test_rejects_wrong_rate(self):
        with pytest.raises(InputError):
            build_global_stmap(uniform_clip((5, 5, 5), n=2, h=40, w=40, fps=30.0))
