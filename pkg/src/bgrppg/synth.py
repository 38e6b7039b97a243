"""Synthetic STMap clips with known pulse and controlled illumination interference.

Clips are synthesised directly at STMap level in RGB and converted to
YUV. Face rows carry the pulse (with a per-region perfusion gain) plus
every shared illumination term; background rows carry the identical
realisation of the shared terms plus their own non-shared clutter. The
global map mixes the two by an 8 x 8 face-coverage mask.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError, ScenarioSaturationError
from .spectral import BvpTrace
from .stmap import N_REGIONS, PIPELINE_T, TARGET_FPS, StMap, rgb_to_yuv

# Relative pulsatile strength of R, G, B in skin, scaled to unit mean.
PULSE_RGB = np.array([0.33, 0.77, 0.53]) / np.mean([0.33, 0.77, 0.53])
# Sodium-vapour street light, scaled to unit mean.
WARM_LIGHT_RGB = np.array([1.0, 0.7, 0.35]) / np.mean([1.0, 0.7, 0.35])
# Daylight filtered through roadside foliage; close to the pulse direction.
FOLIAGE_LIGHT_RGB = np.array([0.55, 1.25, 0.75]) / np.mean([0.55, 1.25, 0.75])

SYSTOLIC_PHASE = 0.2
DICROTIC_PHASE = 0.45
SYSTOLIC_WIDTH = 0.08
DICROTIC_WIDTH = 0.1
DICROTIC_RATIO = 0.35

GAIN_RANGE = (0.7, 1.3)
MAX_SATURATION = 0.2
KINDS = ("sinusoid", "random-walk", "square-pulse-train")


@dataclass
class IllumTerm:
    kind: str = "sinusoid"
    amplitude: float = 0.0   # RMS, same pixel units as bvp_amp
    freq_hz: float = 1.0     # sinusoid / square-pulse-train
    bandwidth_hz: float = 0.5  # random-walk low-pass corner
    shared: bool = True
    color: list = field(default_factory=lambda: WARM_LIGHT_RGB.tolist())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown interference kind {self.kind!r}")
        if self.amplitude < 0:
            raise InputError("interference amplitude must be non-negative")


@dataclass
class SynthScenario:
    hr_bpm: object = 72.0          # float, or [[time_s, bpm], ...] knots
    bvp_amp: float = 1.0
    illum: list = field(default_factory=list)
    noise_std: float = 0.0
    seed: int = 0
    duration: int = PIPELINE_T
    skin_rgb: list = field(default_factory=lambda: [170.0, 120.0, 100.0])
    background_rgb: list = field(default_factory=lambda: [110.0, 115.0, 120.0])

    def __post_init__(self):
        self.illum = [t if isinstance(t, IllumTerm) else IllumTerm(**t) for t in self.illum]
        if self.bvp_amp < 0 or self.noise_std < 0:
            raise InputError("amplitudes must be non-negative")
        if self.duration < 2:
            raise InputError("duration must be at least 2 frames")
        hr = self.hr_trajectory()
        if hr.min() < 40 or hr.max() > 240:
            raise InputError("heart rate must stay within [40, 240] bpm")

    def hr_trajectory(self):
        t = np.arange(self.duration) / TARGET_FPS
        if np.isscalar(self.hr_bpm):
            return np.full(self.duration, float(self.hr_bpm))
        knots = np.asarray(self.hr_bpm, dtype=np.float64)
        return np.interp(t, knots[:, 0], knots[:, 1])

    def mean_hr(self):
        return float(self.hr_trajectory().mean())

    def to_dict(self):
        d = asdict(self)
        if isinstance(self.hr_bpm, np.ndarray):
            d["hr_bpm"] = self.hr_bpm.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SynthClip:
    clip_id: str
    face: StMap
    back: StMap
    glob: StMap
    bvp: BvpTrace
    hr_bpm: float
    saturation: float
    scenario: SynthScenario = None


def _wrapped(u, centre):
    return (u - centre + 0.5) % 1.0 - 0.5


def _cycle_template(u):
    s = np.exp(-0.5 * (_wrapped(u, SYSTOLIC_PHASE) / SYSTOLIC_WIDTH) ** 2)
    d = np.exp(-0.5 * (_wrapped(u, DICROTIC_PHASE) / DICROTIC_WIDTH) ** 2)
    return s + DICROTIC_RATIO * d


def _standardise(x):
    x = x - x.mean()
    sd = x.std()
    return x / sd if sd > 0 else x


def gen_bvp(scenario, rng=None):
    """Two-Gaussian cardiac cycles on the instantaneous-phase grid, unit variance."""
    rng = rng if rng is not None else np.random.default_rng(scenario.seed)
    hr = scenario.hr_trajectory()
    phase0 = rng.uniform()
    cycles = phase0 + np.concatenate([[0.0], np.cumsum(hr[:-1] / 60.0 / TARGET_FPS)])
    return BvpTrace(_standardise(_cycle_template(cycles % 1.0)), TARGET_FPS)


def interference_waveform(term, n, rng):
    """Unit-RMS, zero-mean waveform for one interference term."""
    t = np.arange(n) / TARGET_FPS
    if term.kind == "sinusoid":
        w = np.sin(2 * np.pi * term.freq_hz * t + rng.uniform(0, 2 * np.pi))
    elif term.kind == "square-pulse-train":
        w = (((term.freq_hz * t + rng.uniform()) % 1.0) < 0.3).astype(np.float64)
    else:
        steps = rng.normal(size=n)
        spec = np.fft.rfft(np.cumsum(steps))
        spec[np.fft.rfftfreq(n, 1.0 / TARGET_FPS) > term.bandwidth_hz] = 0.0
        w = np.fft.irfft(spec, n)
    w = w - w.mean()
    rms = np.sqrt(np.mean(w ** 2))
    return w / rms if rms > 0 else w


def face_coverage(grid=8, semi_axes=(2.2, 3.0), supersample=8):
    """Fraction of each global-grid block covered by an elliptical face, row-major."""
    k = grid * supersample
    c = (np.arange(k) + 0.5) / supersample - grid / 2.0
    yy, xx = np.meshgrid(c, c, indexing="ij")
    inside = (xx / semi_axes[0]) ** 2 + (yy / semi_axes[1]) ** 2 <= 1.0
    return inside.reshape(grid, supersample, grid, supersample).mean(axis=(1, 3)).ravel()


def shared_realisations(scenario):
    """Shared interference series (T, 3) per term, exactly as added by ``gen_clip``."""
    return _synthesise(scenario)["shared"]


def _synthesise(scenario):
    rng = np.random.default_rng(scenario.seed)
    n = scenario.duration
    bvp = gen_bvp(scenario, rng)
    gains = rng.uniform(*GAIN_RANGE, size=N_REGIONS)
    skin = np.asarray(scenario.skin_rgb) + rng.normal(0.0, 6.0, size=(N_REGIONS, 3))
    back = np.clip(np.asarray(scenario.background_rgb)
                   + rng.normal(0.0, 20.0, size=(N_REGIONS, 3)), 30.0, 220.0)

    face_rgb = np.repeat(skin[:, None, :], n, axis=1)  # (L, T, 3)
    face_rgb += scenario.bvp_amp * gains[:, None, None] * bvp.samples[None, :, None] * PULSE_RGB
    back_rgb = np.repeat(back[:, None, :], n, axis=1)

    shared = []
    for term in scenario.illum:
        color = np.asarray(term.color, dtype=np.float64)
        if term.shared:
            series = term.amplitude * interference_waveform(term, n, rng)[:, None] * color
            shared.append(series)
            face_rgb += series[None]
            back_rgb += series[None]
        else:
            for m in range(N_REGIONS):
                back_rgb[m] += term.amplitude * interference_waveform(term, n, rng)[:, None] * color

    if scenario.noise_std > 0:
        face_rgb += rng.normal(0.0, scenario.noise_std, size=face_rgb.shape)
        back_rgb += rng.normal(0.0, scenario.noise_std, size=back_rgb.shape)

    cover = face_coverage()[:, None, None]
    glob_rgb = cover * face_rgb.mean(axis=0, keepdims=True) + (1.0 - cover) * back_rgb

    stacked = np.stack([face_rgb, back_rgb, glob_rgb])
    saturation = float(np.mean((stacked < 0.0) | (stacked > 255.0)))
    return {
        "bvp": bvp,
        "shared": shared,
        "maps": [rgb_to_yuv(np.clip(m, 0.0, 255.0)).transpose(2, 0, 1) for m in stacked],
        "saturation": saturation,
    }


def gen_clip(scenario, clip_id="clip"):
    parts = _synthesise(scenario)
    if parts["saturation"] > MAX_SATURATION:
        raise ScenarioSaturationError(
            f"{parts['saturation']:.1%} of samples clipped (limit {MAX_SATURATION:.0%})")
    face, back, glob = parts["maps"]
    return SynthClip(
        clip_id=clip_id,
        face=StMap(face, "raw-yuv"),
        back=StMap(back, "background"),
        glob=StMap(glob, "global"),
        bvp=parts["bvp"],
        hr_bpm=scenario.mean_hr(),
        saturation=parts["saturation"],
        scenario=scenario,
    )


def gen_dataset(scenarios, split_ratio=0.75, seed=0):
    """Generate every scenario, shuffle with ``seed`` and split into (train, test)."""
    if not scenarios:
        raise InputError("scenario list is empty")
    if not 0 < split_ratio < 1:
        raise InputError("split_ratio must lie in (0, 1)")
    clips = [gen_clip(s, f"clip{i:04d}") for i, s in enumerate(scenarios)]
    order = np.random.default_rng(seed).permutation(len(clips))
    n_train = int(round(split_ratio * len(clips)))
    return [clips[i] for i in order[:n_train]], [clips[i] for i in order[n_train:]]


def clean_scenarios(n=50, seed=0, hr_range=(48.0, 180.0)):
    rng = np.random.default_rng(seed)
    return [SynthScenario(hr_bpm=float(rng.uniform(*hr_range)), seed=int(rng.integers(2**31)))
            for _ in range(n)]


def interference_scenarios(n=100, seed=0, ratio=10.0, noise_std=0.5,
                           pulse_hz=(1.1, 1.6), interferer_hz=(0.8, 1.0), color=None):
    """Clips whose shared in-band interferer is ``ratio`` times the pulse amplitude."""
    color = list(FOLIAGE_LIGHT_RGB if color is None else color)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        hr = 60.0 * rng.uniform(*pulse_hz)
        term = IllumTerm("sinusoid", amplitude=ratio, freq_hz=float(rng.uniform(*interferer_hz)),
                         color=[float(c) for c in color])
        out.append(SynthScenario(hr_bpm=float(hr), bvp_amp=1.0, illum=[term],
                                 noise_std=noise_std, seed=int(rng.integers(2**31))))
    return out
