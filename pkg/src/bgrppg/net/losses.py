"""Training losses: reconstruction, PSD-contrastive and negative Pearson."""

from dataclasses import dataclass

import torch

from ..errors import ContractError, UndefinedCorrelationError
from ..spectral import HR_HI_HZ, HR_LO_HZ, NFFT


@dataclass
class LossBreakdown:
    l_r: float
    l_c: float
    l_p: float
    l_total: float

    def as_dict(self):
        return {"l_r": self.l_r, "l_c": self.l_c, "l_p": self.l_p, "l_total": self.l_total}


def torch_psd(x, fs, nfft=NFFT):
    """Differentiable counterpart of ``spectral.psd`` over the last axis.

    Returns ``(freqs, power)``; same scaling as the numpy implementation.
    """
    n = x.shape[-1]
    nfft = max(nfft, n)
    k = torch.arange(n, dtype=x.dtype, device=x.device)
    window = 0.5 - 0.5 * torch.cos(2.0 * torch.pi * k / n)
    xw = (x - x.mean(dim=-1, keepdim=True)) * window
    spec = torch.fft.rfft(xw, n=nfft)
    power = (spec.real ** 2 + spec.imag ** 2) / (fs * n)
    scale = torch.full((power.shape[-1],), 2.0, dtype=x.dtype, device=x.device)
    scale[0] = 1.0
    if nfft % 2 == 0:
        scale[-1] = 1.0
    freqs = torch.fft.rfftfreq(nfft, 1.0 / fs, dtype=x.dtype, device=x.device)
    return freqs, power * scale


def band_distribution(rows, fs, lo=HR_LO_HZ, hi=HR_HI_HZ, nfft=None, eps=1e-30):
    """In-band PSD of each row normalised to unit sum; all-zero rows become uniform.

    ``nfft=None`` keeps the native resolution of the rows (no zero-padding),
    so every bin is an independent frequency sample.
    """
    freqs, power = torch_psd(rows, fs, nfft or rows.shape[-1])
    mask = (freqs >= lo) & (freqs <= min(hi, fs / 2.0))
    p = power[..., mask]
    total = p.sum(dim=-1, keepdim=True)
    uniform = torch.full_like(p, 1.0 / p.shape[-1])
    safe = torch.where(total > eps, total, torch.ones_like(total))
    return torch.where(total > eps, p / safe, uniform)


def psd_feature(f, sub_block, fs, nfft=None):
    """Normalised in-band PSD of the channel-averaged time row ``sub_block`` of ``f`` (C, L', T')."""
    if not 0 <= sub_block < f.shape[-2]:
        raise ContractError(f"sub_block {sub_block} outside [0, {f.shape[-2]})")
    return band_distribution(f[..., sub_block, :].mean(dim=-2), fs, nfft=nfft)


def psd_distance(a, b):
    """Mean squared difference between distributions; pairwise over leading rows.

    ``a``: (..., I, K), ``b``: (..., J, K) -> (..., I, J)
    """
    diff = a.unsqueeze(-2) - b.unsqueeze(-3)
    return diff.pow(2).mean(dim=-1)


def contrastive_from_distances(d_ff, d_fb, tau):
    """log(sum_{i1 != i2} exp(D_ff / tau) / sum_{i, j} exp(D_fb / tau) + 1).

    ``d_ff``: (..., L', L') fine-fine distances, ``d_fb``: (..., L', L')
    fine-back distances. Evaluated in log space as softplus of the
    difference of the two log-sum-exps.
    """
    n = d_ff.shape[-1]
    if n < 2:
        raise ContractError("contrastive loss needs at least two sub-blocks")
    if tau <= 0:
        raise ContractError("tau must be positive")
    off = ~torch.eye(n, dtype=torch.bool, device=d_ff.device)
    lse_num = torch.logsumexp(d_ff[..., off] / tau, dim=-1)
    lse_den = torch.logsumexp(d_fb.flatten(-2) / tau, dim=-1)
    return torch.nn.functional.softplus(lse_num - lse_den)


def contrastive_from_distributions(p_fine, p_back, tau):
    return contrastive_from_distances(psd_distance(p_fine, p_fine), psd_distance(p_fine, p_back), tau)


def contrastive_loss(f_fine, f_back, tau, fs, nfft=None):
    """PSD-contrastive loss on feature tensors (..., C, L', T'); mean over any batch axis."""
    if f_fine.shape != f_back.shape:
        raise ContractError(f"shape mismatch {tuple(f_fine.shape)} vs {tuple(f_back.shape)}")
    p_fine = band_distribution(f_fine.mean(dim=-3), fs, nfft=nfft)
    p_back = band_distribution(f_back.mean(dim=-3), fs, nfft=nfft)
    return contrastive_from_distributions(p_fine, p_back, tau).mean()


def standardise_trace(b, eps=1e-12):
    """Zero-mean, unit-variance copy; a constant trace becomes all zeros."""
    c = b - b.mean(dim=-1, keepdim=True)
    sd = c.pow(2).mean(dim=-1, keepdim=True).sqrt()
    return torch.where(sd > eps, c / torch.where(sd > eps, sd, torch.ones_like(sd)),
                       torch.zeros_like(c))


def stack_bvp(b_g, rows):
    """Single-channel target map (…, 1, rows, T) whose every row is the standardised trace."""
    z = standardise_trace(b_g)
    return z.unsqueeze(-2).unsqueeze(-3).expand(*z.shape[:-1], 1, rows, z.shape[-1])


def reconstruction_loss(decoded, target):
    if decoded.shape != target.shape:
        raise ContractError(f"shape mismatch {tuple(decoded.shape)} vs {tuple(target.shape)}")
    return (decoded - target).pow(2).mean().sqrt()


def pearson_loss(b_p, b_g):
    """1 - sample Pearson correlation in the sums form; mean over any batch axis."""
    t = b_p.shape[-1]
    if b_g.shape[-1] != t:
        raise ContractError("traces differ in length")
    sp, sg = b_p.sum(-1), b_g.sum(-1)
    num = t * (b_p * b_g).sum(-1) - sp * sg
    vp = t * (b_p * b_p).sum(-1) - sp * sp
    vg = t * (b_g * b_g).sum(-1) - sg * sg
    if torch.any(vp <= 0) or torch.any(vg <= 0):
        raise UndefinedCorrelationError("correlation undefined for a constant trace")
    return (1.0 - num / torch.sqrt(vp * vg)).mean()


def total_loss(l_r, l_c, l_p, alpha=0.5, beta=0.5, gamma=1.0):
    return alpha * l_r + beta * l_c + gamma * l_p
