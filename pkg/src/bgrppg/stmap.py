"""Spatiotemporal map (STMap) construction from frames and landmarks.

Three raw maps are produced from one clip, all shaped ``3 x 64 x T``:

* face: YUV means over 64 landmark triangles,
* background: YUV means over 64 rectangles tiling the area outside the
  landmark bounding box,
* global: YUV means over an 8 x 8 grid of the whole frame.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import BackgroundError, InputError, PartitionError, TilingError

N_REGIONS = 64
N_LANDMARKS = 68
TARGET_FPS = 25.0
PIPELINE_T = 320

SEMANTICS = ("raw-yuv", "enhanced-concat", "background", "global", "bvp-target")


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W, 3) uint8 RGB
    fps: float

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[-1] != 3:
            raise InputError(f"frames must be T x H x W x 3, got {f.shape}")
        if f.shape[0] < 2 or f.shape[1] < 16 or f.shape[2] < 16:
            raise InputError(f"clip too small: {f.shape}")
        if f.dtype != np.uint8:
            if np.any(f < 0) or np.any(f > 255):
                raise InputError("samples must lie in [0, 255]")
            f = np.rint(f).astype(np.uint8)
        if not self.fps > 0:
            raise InputError("fps must be positive")
        self.frames = f
        self.fps = float(self.fps)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def duration(self):
        return self.n_frames / self.fps


@dataclass
class StMap:
    data: np.ndarray  # (C, L, T)
    semantics: str = "raw-yuv"
    fs: float = TARGET_FPS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise InputError(f"StMap data must be C x L x T, got {self.data.shape}")
        if self.semantics not in SEMANTICS:
            raise InputError(f"unknown channel semantics {self.semantics!r}")
        if not np.all(np.isfinite(self.data)):
            raise InputError("StMap contains non-finite values")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class RegionPartition:
    """Fixed landmark triangles tracked through every frame.

    The triangle topology is computed once; per-frame polygons follow the
    landmarks so a region keeps its identity while the face moves.
    """

    triangles: np.ndarray  # (64, 3) landmark indices, canonical order
    landmarks: np.ndarray  # (T, 68, 2) x, y pixel coordinates
    bbox: np.ndarray = field(init=False)  # (T, 4) x0, y0, x1, y1 (inclusive)

    def __post_init__(self):
        pts = self.landmarks
        lo = np.floor(pts.min(axis=1)).astype(int)
        hi = np.ceil(pts.max(axis=1)).astype(int)
        self.bbox = np.concatenate([lo, hi], axis=1)

    @property
    def n_frames(self):
        return self.landmarks.shape[0]

    def polygons(self, t):
        """Vertex coordinates of every region at frame ``t``: (64, 3, 2)."""
        return self.landmarks[t][self.triangles]

    def label_image(self, t, height, width):
        """Integer map of region ids at frame ``t``; -1 marks unassigned pixels.

        Pixels are claimed first-come in canonical order, so regions never
        share a pixel even when triangle edges coincide.
        """
        labels = np.full((height, width), -1, dtype=np.int64)
        for k, tri in enumerate(self.polygons(t)):
            x0 = max(int(np.floor(tri[:, 0].min())), 0)
            x1 = min(int(np.ceil(tri[:, 0].max())), width - 1)
            y0 = max(int(np.floor(tri[:, 1].min())), 0)
            y1 = min(int(np.ceil(tri[:, 1].max())), height - 1)
            if x1 < x0 or y1 < y0:
                continue
            ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
            inside = _in_triangle(xs.astype(float), ys.astype(float), tri)
            sub = labels[y0:y1 + 1, x0:x1 + 1]
            take = inside & (sub < 0)
            sub[take] = k
        return labels


def _in_triangle(xs, ys, tri, tol=1e-9):
    (ax, ay), (bx, by), (cx, cy) = tri
    det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
    if abs(det) < 1e-12:
        return np.zeros(xs.shape, dtype=bool)
    l1 = ((by - cy) * (xs - cx) + (cx - bx) * (ys - cy)) / det
    l2 = ((cy - ay) * (xs - cx) + (ax - cx) * (ys - cy)) / det
    l3 = 1.0 - l1 - l2
    return (l1 >= -tol) & (l2 >= -tol) & (l3 >= -tol)


def interpolate_to_25fps(clip):
    """Resample a clip onto a 25 fps timeline by per-pixel linear interpolation."""
    if not 10 <= clip.fps <= 120:
        raise InputError(f"fps {clip.fps} outside supported range [10, 120]")
    if clip.fps == TARGET_FPS:
        return VideoClip(clip.frames.copy(), TARGET_FPS)
    n_out = max(int(round(clip.n_frames * TARGET_FPS / clip.fps)), 2)
    pos = np.arange(n_out) * (clip.fps / TARGET_FPS)
    pos = np.minimum(pos, clip.n_frames - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, clip.n_frames - 1)
    w = (pos - i0)[:, None, None, None]
    src = clip.frames.astype(np.float64)
    out = (1.0 - w) * src[i0] + w * src[i1]
    return VideoClip(np.clip(np.rint(out), 0, 255).astype(np.uint8), TARGET_FPS)


_YUV = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YUV_OFFSET = np.array([0.0, 128.0, 128.0])


def rgb_to_yuv(rgb, clamp=True):
    """Full-range BT.601 RGB -> YUV on the last axis."""
    out = np.asarray(rgb, dtype=np.float64) @ _YUV.T + _YUV_OFFSET
    return np.clip(out, 0.0, 255.0) if clamp else out


def yuv_to_rgb(yuv):
    """Exact inverse of the unclamped ``rgb_to_yuv`` transform."""
    return (np.asarray(yuv, dtype=np.float64) - _YUV_OFFSET) @ np.linalg.inv(_YUV).T


def _canonical_triangles(reference):
    ref = np.asarray(reference, dtype=np.float64)
    centered = ref - ref.mean(axis=0)
    scale = np.sqrt((centered ** 2).sum(axis=1).mean())
    if not scale > 1e-9:
        raise PartitionError("degenerate landmarks: all points coincide")
    norm = np.round(centered / scale, 9)
    # Rank below two means the points are collinear.
    if np.linalg.matrix_rank(norm - norm.mean(axis=0), tol=1e-6) < 2:
        raise PartitionError("degenerate landmarks: collinear hull")
    try:
        tri = Delaunay(norm)
    except QhullError as exc:
        raise PartitionError(f"triangulation failed: {exc}") from exc
    simplices = np.sort(tri.simplices, axis=1)
    pts = norm[simplices]
    area = 0.5 * np.abs(
        (pts[:, 1, 0] - pts[:, 0, 0]) * (pts[:, 2, 1] - pts[:, 0, 1])
        - (pts[:, 2, 0] - pts[:, 0, 0]) * (pts[:, 1, 1] - pts[:, 0, 1]))
    simplices = simplices[area > 1e-9]
    order = np.lexsort(simplices.T[::-1])
    return simplices[order]


def region_partition(landmarks, frame_shape=None):
    """Triangulate the landmark hull into 64 canonical regions.

    ``landmarks`` is ``(T, 68, 2)`` (or a single ``(68, 2)`` set). The
    topology comes from the first frame; triangles are ordered by their
    sorted vertex-index triple and truncated to the first 64.
    """
    pts = np.asarray(landmarks, dtype=np.float64)
    if pts.ndim == 2:
        pts = pts[None]
    if pts.ndim != 3 or pts.shape[1:] != (N_LANDMARKS, 2):
        raise PartitionError(f"expected (T, 68, 2) landmarks, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise PartitionError("landmarks contain non-finite coordinates")
    if frame_shape is not None:
        h, w = frame_shape
        pts = pts.copy()
        pts[..., 0] = np.clip(pts[..., 0], 0, w - 1)
        pts[..., 1] = np.clip(pts[..., 1], 0, h - 1)
    triangles = _canonical_triangles(pts[0])
    if len(triangles) < N_REGIONS:
        raise PartitionError(
            f"triangulation yields {len(triangles)} regions, need {N_REGIONS}")
    return RegionPartition(triangles[:N_REGIONS].copy(), pts)


def _check_alignment(clip, partition):
    if clip.fps != TARGET_FPS:
        raise InputError(f"clip must be at {TARGET_FPS} fps, got {clip.fps}")
    if partition.n_frames not in (1, clip.n_frames):
        raise PartitionError(
            f"partition has {partition.n_frames} frames, clip has {clip.n_frames}")


def _frame_index(partition, t):
    return 0 if partition.n_frames == 1 else t


def _label_means(yuv, labels, n):
    flat = labels.ravel()
    keep = flat >= 0
    counts = np.bincount(flat[keep], minlength=n)
    out = np.empty((3, n))
    for c in range(3):
        out[c] = np.bincount(flat[keep], weights=yuv[..., c].ravel()[keep], minlength=n)
    return out, counts


def build_face_stmap(clip, partition):
    _check_alignment(clip, partition)
    T, H, W, _ = clip.frames.shape
    out = np.empty((3, N_REGIONS, T))
    for t in range(T):
        labels = partition.label_image(_frame_index(partition, t), H, W)
        sums, counts = _label_means(rgb_to_yuv(clip.frames[t]), labels, N_REGIONS)
        if np.any(counts == 0):
            empty = int(np.flatnonzero(counts == 0)[0])
            raise PartitionError(f"region {empty} is empty at frame {t}")
        out[:, :, t] = sums / counts
    return StMap(out, "raw-yuv", TARGET_FPS)


def _allocate(areas, total):
    areas = np.asarray(areas, dtype=np.float64)
    quota = total * areas / areas.sum()
    n = np.floor(quota).astype(int)
    rest = total - n.sum()
    # Largest remainder; ties go to the earlier band.
    for i in np.argsort(-(quota - n), kind="stable")[:rest]:
        n[i] += 1
    return n


def _tile_band(y0, y1, x0, x1, n):
    """Split the half-open band [y0, y1) x [x0, x1) into ``n`` row-major rectangles."""
    h, w = y1 - y0, x1 - x0
    rows = int(np.clip(round(np.sqrt(n * h / w)), 1, min(n, h)))
    per_row = np.full(rows, n // rows)
    per_row[: n % rows] += 1
    if per_row.max() > w:
        raise BackgroundError("background band too narrow for its window count")
    ys = np.linspace(y0, y1, rows + 1).round().astype(int)
    rects = []
    for r in range(rows):
        xs = np.linspace(x0, x1, per_row[r] + 1).round().astype(int)
        for c in range(per_row[r]):
            rects.append((ys[r], ys[r + 1], xs[c], xs[c + 1]))
    return rects


def background_windows(bbox, height, width, n=N_REGIONS):
    """Rectangles (y0, y1, x0, x1), half-open, tiling the complement of ``bbox``."""
    bx0, by0, bx1, by1 = (int(v) for v in bbox)
    bx0, by0 = max(bx0, 0), max(by0, 0)
    bx1, by1 = min(bx1, width - 1), min(by1, height - 1)
    bands = [
        (0, by0, 0, width),                 # top
        (by1 + 1, height, 0, width),        # bottom
        (by0, by1 + 1, 0, bx0),             # left
        (by0, by1 + 1, bx1 + 1, width),     # right
    ]
    areas = [max(y1 - y0, 0) * max(x1 - x0, 0) for y0, y1, x0, x1 in bands]
    if sum(areas) < n:
        raise BackgroundError("bounding box leaves too little background")
    counts = _allocate(areas, n)
    rects = []
    for band, k in zip(bands, counts):
        if k:
            rects.extend(_tile_band(*band, k))
    return rects


def build_background_stmap(clip, partition):
    _check_alignment(clip, partition)
    T, H, W, _ = clip.frames.shape
    out = np.empty((3, N_REGIONS, T))
    for t in range(T):
        yuv = rgb_to_yuv(clip.frames[t])
        rects = background_windows(partition.bbox[_frame_index(partition, t)], H, W)
        for k, (y0, y1, x0, x1) in enumerate(rects):
            out[:, k, t] = yuv[y0:y1, x0:x1].reshape(-1, 3).mean(axis=0)
    return StMap(out, "background", TARGET_FPS)


def build_global_stmap(clip, grid=8):
    if clip.fps != TARGET_FPS:
        raise InputError(f"clip must be at {TARGET_FPS} fps, got {clip.fps}")
    T, H, W, _ = clip.frames.shape
    if H < grid or W < grid:
        raise TilingError(f"frame {H}x{W} smaller than the {grid}x{grid} grid")
    ys = np.linspace(0, H, grid + 1).round().astype(int)
    xs = np.linspace(0, W, grid + 1).round().astype(int)
    yuv = rgb_to_yuv(clip.frames)
    out = np.empty((3, grid * grid, T))
    for r in range(grid):
        for c in range(grid):
            block = yuv[:, ys[r]:ys[r + 1], xs[c]:xs[c + 1]]
            out[:, r * grid + c, :] = block.mean(axis=(1, 2)).T
    return StMap(out, "global", TARGET_FPS)


def mock_landmarks(center=(64.0, 64.0), scale=40.0):
    """A deterministic 68-point face-like layout in iBUG ordering.

    Useful for demos and tests; real pipelines supply tracked landmarks.
    """
    cx, cy = center
    pts = []
    for a in np.linspace(np.pi * 0.95, np.pi * 0.05, 17):   # jaw 0-16
        pts.append((cx - np.cos(a) * scale, cy + np.sin(a) * scale * 1.1 - 0.1 * scale))
    for side in (-1, 1):                                      # brows 17-26
        for k in range(5):
            u = (k - 2) / 2.0
            pts.append((cx + side * 0.45 * scale + u * 0.3 * scale,
                        cy - 0.55 * scale - 0.08 * scale * (1 - u * u)))
    for k in range(4):                                        # nose bridge 27-30
        pts.append((cx, cy - 0.4 * scale + k * 0.15 * scale))
    for k in range(5):                                        # nostrils 31-35
        pts.append((cx + (k - 2) * 0.1 * scale, cy + 0.25 * scale + 0.03 * scale * (2 - abs(k - 2))))
    for side in (-1, 1):                                      # eyes 36-47
        ex = cx + side * 0.4 * scale
        for a in np.linspace(0, 2 * np.pi, 6, endpoint=False):
            pts.append((ex + 0.15 * scale * np.cos(a), cy - 0.3 * scale + 0.07 * scale * np.sin(a)))
    for a in np.linspace(0, 2 * np.pi, 12, endpoint=False):   # outer lip 48-59
        pts.append((cx + 0.3 * scale * np.cos(a + np.pi), cy + 0.55 * scale + 0.12 * scale * np.sin(a)))
    for a in np.linspace(0, 2 * np.pi, 8, endpoint=False):    # inner lip 60-67
        pts.append((cx + 0.2 * scale * np.cos(a + np.pi), cy + 0.55 * scale + 0.05 * scale * np.sin(a)))
    return np.asarray(pts, dtype=np.float64)
