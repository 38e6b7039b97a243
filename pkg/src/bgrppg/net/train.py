"""Training loop, inference and heart-rate evaluation for ``DisentangleNet``."""

import json
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..biose import BioseConfig, biose_enhance
from ..errors import ContractError, DivergenceError, GradCheckAborted, InputError, NoPulseError
from ..spectral import HrBand, hr_from_trace, metrics
from .losses import (LossBreakdown, contrastive_loss, pearson_loss, reconstruction_loss,
                     stack_bvp, total_loss)
from .model import DisentangleNet, ModelConfig


@dataclass
class TrainConfig:
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 1.0
    tau: float = 0.08
    lr: float = 1e-5
    lr_after: float = 0.5e-5
    lr_switch_epoch: int = 50
    epochs: int = 100
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    band: HrBand = field(default_factory=HrBand)
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.band, dict):
            self.band = HrBand(**self.band)
        elif isinstance(self.band, (list, tuple)):
            self.band = HrBand(*self.band)
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        self.betas = tuple(self.betas)
        if self.tau <= 0:
            raise InputError("tau must be positive")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise InputError("loss weights must be non-negative")
        if self.epochs < 1:
            raise InputError("epochs must be at least 1")

    def lr_at(self, epoch):
        return self.lr if epoch < self.lr_switch_epoch else self.lr_after

    def to_dict(self):
        return asdict(self)


@dataclass
class Sample:
    """One pipeline-ready training/evaluation item."""

    clip_id: str
    face: np.ndarray   # (6, L, T) enhanced face map
    back: np.ndarray   # (3, L, T)
    glob: np.ndarray   # (3, L, T)
    bvp: np.ndarray    # (T,)
    hr_bpm: float
    fs: float = 25.0


def make_sample(clip, biose_cfg=None):
    """Turn a ``SynthClip`` (or anything with face/back/glob/bvp) into a ``Sample``."""
    face = biose_enhance(clip.face, biose_cfg or BioseConfig()).data
    return Sample(clip.clip_id, face, clip.back.data, clip.glob.data,
                  np.asarray(clip.bvp.samples), float(clip.hr_bpm), clip.face.fs)


@contextmanager
def single_thread():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


def _tensor(a, dtype):
    return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)[None]


def feature_fs(cfg, fs):
    return fs * cfg.feature_shape[-1] / cfg.frames


def forward_losses(model, sample, cfg, shift_seed, dtype=torch.float32):
    """Run the full model on one sample and return (loss tensor, breakdown, outputs)."""
    face, back, glob = (_tensor(a, dtype) for a in (sample.face, sample.back, sample.glob))
    b_g = torch.as_tensor(sample.bvp, dtype=dtype)[None]
    out = model(face, back, glob, shift_seed)
    target = stack_bvp(b_g, out["recon"].shape[-2])
    l_r = reconstruction_loss(out["recon"], target)
    l_c = contrastive_loss(out["fine"], out["back"], cfg.tau, feature_fs(model.cfg, sample.fs))
    l_p = pearson_loss(out["bvp"], b_g)
    l_total = total_loss(l_r, l_c, l_p, cfg.alpha, cfg.beta, cfg.gamma)
    parts = LossBreakdown(*(float(v.detach()) for v in (l_r, l_c, l_p, l_total)))
    return l_total, parts, out


def _check_samples(samples, mcfg):
    if not samples:
        raise InputError("training set is empty")
    for s in samples:
        if s.face.shape != (mcfg.in_channels, mcfg.rows, mcfg.frames) \
                or s.back.shape[1:] != (mcfg.rows, mcfg.frames) \
                or s.glob.shape[1:] != (mcfg.rows, mcfg.frames) or len(s.bvp) != mcfg.frames:
            raise ContractError(f"sample {s.clip_id} is not pipeline-shaped")


def build_model(cfg):
    torch.manual_seed(cfg.seed)
    return DisentangleNet(cfg.model)


def train(samples, cfg, log=None, model=None):
    """Train on ``samples``; returns (model, per-epoch log records).

    ``log`` is an optional callable receiving each epoch's record as it
    completes. Fully deterministic for a given seed and sample list.
    """
    _check_samples(samples, cfg.model)
    with single_thread():
        model = model or build_model(cfg)
        model.train()
        opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas,
                                eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
        rng = np.random.default_rng(cfg.seed)
        records = []
        for epoch in range(cfg.epochs):
            for group in opt.param_groups:
                group["lr"] = cfg.lr_at(epoch)
            sums = np.zeros(4)
            for idx in rng.permutation(len(samples)):
                shift_seed = int(rng.integers(2**31))
                loss, parts, _ = forward_losses(model, samples[idx], cfg, shift_seed)
                if not math.isfinite(parts.l_total):
                    raise DivergenceError(epoch)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                sums += [parts.l_r, parts.l_c, parts.l_p, parts.l_total]
            mean = sums / len(samples)
            rec = {"epoch": epoch, "lr": cfg.lr_at(epoch),
                   "l_r": mean[0], "l_c": mean[1], "l_p": mean[2], "l_total": mean[3]}
            rec = {k: (float(v) if not isinstance(v, int) else v) for k, v in rec.items()}
            records.append(rec)
            if log is not None:
                log(rec)
    model.eval()
    return model, records


def log_lines(records):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


@torch.no_grad()
def predict_bvp(model, sample, shift_seed=0):
    with single_thread():
        face = _tensor(sample.face, torch.float32)
        back = _tensor(sample.back, torch.float32)
        return model.predict(face, back, shift_seed)[0].double().numpy()


def hr_or_nan(trace, fs, band):
    try:
        return hr_from_trace(trace, fs, band)
    except NoPulseError:
        return float("nan")


def evaluate(model, samples, band=HrBand(), shift_seed=0):
    """Per-clip predictions plus a ``MetricsReport`` over the clips."""
    rows = []
    for s in samples:
        bvp = predict_bvp(model, s, shift_seed)
        rows.append({"clip_id": s.clip_id, "hr_gt": s.hr_bpm,
                     "hr_pred": hr_or_nan(bvp, s.fs, band)})
    pred = np.array([r["hr_pred"] for r in rows])
    gt = np.array([r["hr_gt"] for r in rows])
    # An absent estimate counts as the far band edge rather than dropping the clip.
    far = np.where(np.abs(gt - 60 * band.lo) > np.abs(gt - 60 * band.hi), 60 * band.lo, 60 * band.hi)
    pred = np.where(np.isnan(pred), far, pred)
    return rows, metrics(pred, gt)


def grad_check(loss_fn, params, eps=1e-5, n_coords=200, seed=0, floor=1e-6):
    """Max relative error between autograd and central finite differences.

    ``loss_fn()`` evaluates a scalar loss from the current values of
    ``params`` (a list of float64 leaf tensors). Coordinates are sampled
    uniformly without replacement across the parameters the loss depends
    on; the relative
    error of each uses ``max(|g_fd|, |g_ad|, floor)`` as denominator.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise InputError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    if n_coords < 1:
        raise InputError("n_coords must be positive")
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise GradCheckAborted("loss is not finite at the base point")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    # Parameters outside this loss's graph have nothing to check.
    used = [(p, g) for p, g in zip(params, grads) if g is not None]
    if not used:
        raise InputError("loss does not depend on any of the parameters")
    params, grads = [p for p, _ in used], [g for _, g in used]

    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    with torch.no_grad():
        for flat in np.sort(picks):
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            j = int(flat - offsets[i])
            view = params[i].view(-1)
            orig = view[j].item()
            view[j] = orig + eps
            up = loss_fn()
            view[j] = orig - eps
            down = loss_fn()
            view[j] = orig
            if not (torch.isfinite(up) and torch.isfinite(down)):
                raise GradCheckAborted(f"loss not finite around coordinate {flat}")
            g_fd = (up.item() - down.item()) / (2 * eps)
            g_ad = grads[i].view(-1)[j].item()
            worst = max(worst, abs(g_fd - g_ad) / max(abs(g_fd), abs(g_ad), floor))
    return worst


def random_sample(mcfg, seed, fs=25.0, hr_hz=1.3):
    """Smooth random maps and a sinusoidal BVP shaped for ``mcfg`` (gradient checks)."""
    rng = np.random.default_rng(seed)
    t = np.arange(mcfg.frames) / fs

    def smooth(c):
        base = rng.normal(size=(c, mcfg.rows, 1))
        f = rng.uniform(0.3, 3.0, size=(c, mcfg.rows, 1))
        ph = rng.uniform(0, 2 * np.pi, size=(c, mcfg.rows, 1))
        return base + np.sin(2 * np.pi * f * t + ph) + 0.1 * rng.normal(size=(c, mcfg.rows, len(t)))

    bvp = np.sin(2 * np.pi * hr_hz * t) + 0.1 * rng.normal(size=len(t))
    return Sample(f"rand{seed}", smooth(mcfg.in_channels), smooth(3), smooth(3), bvp, 60 * hr_hz, fs)


def loss_closures(model, sample, cfg, shift_seed=0):
    """Scalar closures for l_p, l_r and l_c, each composed with the full forward pass."""
    dtype = next(model.parameters()).dtype
    fs_feat = feature_fs(model.cfg, sample.fs)

    def run():
        face, back, glob = (_tensor(a, dtype) for a in (sample.face, sample.back, sample.glob))
        return model(face, back, glob, shift_seed)

    b_g = torch.as_tensor(sample.bvp, dtype=dtype)[None]
    return {
        "l_p": lambda: pearson_loss(run()["bvp"], b_g),
        "l_r": lambda: (lambda o: reconstruction_loss(o["recon"], stack_bvp(b_g, o["recon"].shape[-2])))(run()),
        "l_c": lambda: (lambda o: contrastive_loss(o["fine"], o["back"], cfg.tau, fs_feat))(run()),
    }


def gradcheck_suite(seed=0, mcfg=None, eps=1e-5, n_coords=200, tau=0.08):
    """Float64 finite-difference check of every loss on a small model; name -> max rel err."""
    mcfg = mcfg or ModelConfig.small()
    with single_thread():
        torch.manual_seed(seed)
        model = DisentangleNet(mcfg).double()
        cfg = TrainConfig(tau=tau, model=mcfg)
        fns = loss_closures(model, random_sample(mcfg, seed), cfg, shift_seed=seed)
        params = [p for p in model.parameters()]
        return {k: grad_check(fn, params, eps, n_coords, seed) for k, fn in fns.items()}
