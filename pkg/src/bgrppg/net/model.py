"""U-shaped STMap transformer with background-referenced disentanglement.

Tensors inside the network are laid out ``(B, C, L, T)``: channels,
region rows, time. The encoder halves ``L`` and ``T`` twice by learned
2 x 2 patch merging; each stage is followed by a pair of windowed
attention blocks over the region axis whose first block sees the rows in
a seeded random order and whose second block sees them restored.
"""

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ..errors import ContractError

HEAD_STRIDES = (2, 1, 2, 1, 1, 1)


@dataclass
class ModelConfig:
    in_channels: int = 6
    stage_channels: tuple = (16, 32)
    rows: int = 64            # L of input maps
    frames: int = 320         # T of input maps
    window: int = 8           # attention window along the region axis
    heads: int = 2
    head_channels: tuple = (32, 24, 16, 16, 8, 1)
    head_kernel: int = 9
    decoder_channels: int = 8

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.head_channels = tuple(self.head_channels)
        if self.rows % 4 or self.frames % 4:
            raise ContractError("rows and frames must be divisible by 4")
        if self.rows // 4 < 2:
            raise ContractError("need at least two feature rows (L' >= 2)")
        if len(self.head_channels) != len(HEAD_STRIDES) or self.head_channels[-1] != 1:
            raise ContractError("head needs six blocks ending in one channel")

    @property
    def feature_shape(self):
        return (self.stage_channels[-1], self.rows // 4, self.frames // 4)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def small(cls):
        """Configuration used for finite-difference gradient checks."""
        return cls(stage_channels=(4, 4), rows=16, frames=64, window=4, heads=1,
                   head_channels=(4, 4, 4, 4, 4, 1), head_kernel=3, decoder_channels=4)


def _softmax(s):
    # Explicit form; much faster than torch.softmax on CPU for short rows.
    e = (s - s.amax(dim=-1, keepdim=True).detach()).exp()
    return e / e.sum(dim=-1, keepdim=True)


def permutation_for(seed, n):
    return np.random.default_rng(seed).permutation(n)


def spatial_shift(x, seed, stage):
    """Permute the region axis (dim -2) by a seeded permutation, or undo it.

    ``stage="first"`` applies the permutation, ``stage="second"`` its
    inverse; applying both with one seed is the identity.
    """
    perm = permutation_for(seed, x.shape[-2])
    if stage == "second":
        perm = np.argsort(perm)
    elif stage != "first":
        raise ValueError(f"stage must be 'first' or 'second', got {stage!r}")
    return x.index_select(-2, torch.as_tensor(perm, device=x.device))


def standardise_map(x, eps=1e-6):
    """Remove each row's temporal mean and scale each channel to unit RMS."""
    x = x - x.mean(dim=-1, keepdim=True)
    rms = x.pow(2).mean(dim=(-2, -1), keepdim=True).add(eps * eps).sqrt()
    return x / rms


class PatchMerge(nn.Module):
    """Stride-2 reduction along both region and time axes."""

    def __init__(self, cin, cout):
        super().__init__()
        self.proj = nn.Linear(4 * cin, cout, bias=False)

    def forward(self, x):
        b, c, l, t = x.shape
        x = x.reshape(b, c, l // 2, 2, t // 2, 2).permute(0, 2, 4, 1, 3, 5)
        x = self.proj(x.reshape(b, l // 2, t // 2, 4 * c))
        return x.permute(0, 3, 1, 2)


class PatchExpand(nn.Module):
    """Stride-2 expansion along both axes (inverse layout of ``PatchMerge``)."""

    def __init__(self, cin, cout):
        super().__init__()
        self.proj = nn.Linear(cin, 4 * cout, bias=False)
        self.cout = cout

    def forward(self, x):
        b, c, l, t = x.shape
        y = self.proj(x.permute(0, 2, 3, 1))  # b, l, t, 4*cout
        y = y.reshape(b, l, t, self.cout, 2, 2).permute(0, 3, 1, 4, 2, 5)
        return y.reshape(b, self.cout, 2 * l, 2 * t)


class RowAttentionBlock(nn.Module):
    """Pre-norm transformer block; attention runs over region rows inside windows."""

    def __init__(self, dim, heads, window):
        super().__init__()
        self.heads, self.window = heads, window
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.out = nn.Linear(dim, dim, bias=False)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def _attend(self, x):
        b, l, t, c = x.shape
        w = min(self.window, l)
        h = self.heads
        # (b, l, t, c) -> (b, window index, row in window, t, head, head dim)
        q, k, v = (z.reshape(b, l // w, w, t, h, c // h) for z in self.qkv(x).chunk(3, dim=-1))
        scores = torch.einsum("bnithd,bnjthd->bnthij", q, k) / np.sqrt(c // h)
        y = torch.einsum("bnthij,bnjthd->bnithd", _softmax(scores), v)
        return self.out(y.reshape(b, l, t, c))

    def forward(self, x):
        # x: (B, C, L, T)
        y = x.permute(0, 2, 3, 1)
        y = y + self._attend(self.norm1(y))
        y = y + self.mlp(self.norm2(y))
        return y.permute(0, 3, 1, 2)


class AttentionUnit(nn.Module):
    def __init__(self, dim, heads, window):
        super().__init__()
        self.first = RowAttentionBlock(dim, heads, window)
        self.second = RowAttentionBlock(dim, heads, window)

    def forward(self, x, shift_seed):
        x = self.first(spatial_shift(x, shift_seed, "first"))
        return self.second(spatial_shift(x, shift_seed, "second"))


class Encoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c1, c2 = cfg.stage_channels
        self.cfg = cfg
        self.merge1 = PatchMerge(cfg.in_channels, c1)
        self.unit1 = AttentionUnit(c1, cfg.heads, cfg.window)
        self.merge2 = PatchMerge(c1, c2)
        self.unit2 = AttentionUnit(c2, cfg.heads, cfg.window)

    def prepare(self, x):
        """Validate, standardise and zero-pad an input map batch to ``in_channels``."""
        cfg = self.cfg
        if x.dim() != 4 or x.shape[1] not in (3, cfg.in_channels) \
                or x.shape[2:] != (cfg.rows, cfg.frames):
            raise ContractError(
                f"encoder expects (B, 3|{cfg.in_channels}, {cfg.rows}, {cfg.frames}), "
                f"got {tuple(x.shape)}")
        x = standardise_map(x)
        if x.shape[1] < cfg.in_channels:
            x = F.pad(x, (0, 0, 0, 0, 0, cfg.in_channels - x.shape[1]))
        return x

    def encode(self, x, shift_seed=0):
        s1 = self.unit1(self.merge1(x), shift_seed)
        f = self.unit2(self.merge2(s1), shift_seed + 1)
        return f, [x, s1]

    def forward(self, x, shift_seed=0):
        """Return the bottleneck features and the skip tensors ``[stem, stage1]``."""
        return self.encode(self.prepare(x), shift_seed)


class Decoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c1, c2 = cfg.stage_channels
        cd = cfg.decoder_channels
        self.expand1 = PatchExpand(c2, c1)
        self.norm1 = nn.LayerNorm(c1)
        self.expand2 = PatchExpand(c1, cd)
        self.stem_skip = nn.Linear(cfg.in_channels, cd, bias=False)
        self.norm2 = nn.LayerNorm(cd)
        self.out = nn.Linear(cd, 1, bias=False)

    def forward(self, f, skips):
        if skips is None or len(skips) != 2:
            raise ContractError("decoder needs the two skip tensors from the encoder")
        stem, s1 = skips
        y = self.expand1(f) + s1
        y = F.gelu(self.norm1(y.permute(0, 2, 3, 1)))          # b, l, t, c
        y = self.expand2(y.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        y = y + self.stem_skip(stem.permute(0, 2, 3, 1))
        y = self.out(F.gelu(self.norm2(y)))
        return y.permute(0, 3, 1, 2)                            # b, 1, L, T


def channel_norm(x, weight=None, bias=None, eps=1e-5):
    """Normalise each channel over (rows, time) of every sample."""
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = (x - mean).pow(2).mean(dim=(-2, -1), keepdim=True)
    y = (x - mean) / torch.sqrt(var + eps)
    if weight is not None:
        y = y * weight[:, None, None] + bias[:, None, None]
    return y


class HeadBlock(nn.Module):
    def __init__(self, cin, cout, stride, kernel, last=False):
        super().__init__()
        if stride == 2:
            self.conv = nn.ConvTranspose1d(cin, cout, 4, stride=2, padding=1, bias=False)
        else:
            self.conv = nn.ConvTranspose1d(cin, cout, kernel, padding=kernel // 2, bias=False)
        self.last = last
        if not last:
            self.weight = nn.Parameter(torch.ones(cout))
            self.bias = nn.Parameter(torch.zeros(cout))

    def forward(self, x):
        # x: (B, C, L', T)
        b, c, l, t = x.shape
        y = self.conv(x.permute(0, 2, 1, 3).reshape(b * l, c, t))
        y = y.reshape(b, l, -1, y.shape[-1]).permute(0, 2, 1, 3)
        if self.last:
            return channel_norm(y)
        return channel_norm(F.gelu(y), self.weight, self.bias)


class RegressionHead(nn.Module):
    """Six temporal transposed-convolution blocks, then a mean over rows."""

    def __init__(self, cfg):
        super().__init__()
        chans = (cfg.stage_channels[-1],) + cfg.head_channels
        self.blocks = nn.ModuleList(
            HeadBlock(chans[i], chans[i + 1], s, cfg.head_kernel, last=i == len(HEAD_STRIDES) - 1)
            for i, s in enumerate(HEAD_STRIDES))

    def forward(self, f):
        for block in self.blocks:
            f = block(f)
        return f.mean(dim=(1, 2))  # (B, T)


def disentangle(f_fore, f_back):
    """Suppress foreground rows that resemble the background reference.

    Per channel, scores are time inner products between background rows
    and foreground rows (divided by T'); a softmax over the foreground
    index gives, for each background row, a distribution over foreground
    rows; one minus that weight mixes the foreground rows.
    """
    if f_fore.shape != f_back.shape:
        raise ContractError(f"shape mismatch {tuple(f_fore.shape)} vs {tuple(f_back.shape)}")
    t = f_fore.shape[-1]
    scores = f_back @ f_fore.transpose(-1, -2) / t
    return (1.0 - torch.softmax(scores, dim=-1)) @ f_fore


class DisentangleNet(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.encoder = Encoder(self.cfg)
        self.decoder = Decoder(self.cfg)
        self.head = RegressionHead(self.cfg)

    def forward(self, face, back, glob, shift_seed=0):
        enc = self.encoder
        b = face.shape[0]
        # One batched pass through the shared encoder; every op is per-sample.
        x = torch.cat([enc.prepare(face), enc.prepare(back), enc.prepare(glob)])
        f, (stem, s1) = enc.encode(x, shift_seed)
        f_fore, f_back, f_coar = f[:b], f[b:2 * b], f[2 * b:]
        f_fine = disentangle(f_fore, f_back)
        return {
            "fore": f_fore,
            "back": f_back,
            "coarse": f_coar,
            "fine": f_fine,
            "recon": self.decoder(f_coar, [stem[2 * b:], s1[2 * b:]]),
            "bvp": self.head(f_fine),
        }

    def predict(self, face, back, shift_seed=0):
        enc = self.encoder
        b = face.shape[0]
        f, _ = enc.encode(torch.cat([enc.prepare(face), enc.prepare(back)]), shift_seed)
        return self.head(disentangle(f[:b], f[b:]))
