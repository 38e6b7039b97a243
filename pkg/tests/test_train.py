import json

import numpy as np
import pytest
import torch

from bgrppg.errors import ContractError, DivergenceError, GradCheckAborted, InputError
from bgrppg.net import checkpoint
from bgrppg.net.model import ModelConfig
from bgrppg.net.train import (Sample, TrainConfig, build_model, evaluate, grad_check,
                              gradcheck_suite, log_lines, make_sample, random_sample, train)
from bgrppg.synth import clean_scenarios, gen_clip

SMALL = ModelConfig.small()


def small_samples(n, seed=0):
    """Clean synthetic clips cropped to the small model's 16 x 64 grid."""
    out = []
    for i, sc in enumerate(clean_scenarios(n, seed=seed, hr_range=(70, 150))):
        s = make_sample(gen_clip(sc, f"c{i}"))
        out.append(Sample(s.clip_id, s.face[:, :16, :64], s.back[:, :16, :64], s.glob[:, :16, :64],
                          s.bvp[:64], s.hr_bpm))
    return out


def small_cfg(**kw):
    return TrainConfig(model=SMALL, **kw)


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.alpha, cfg.beta, cfg.gamma, cfg.tau) == (0.5, 0.5, 1.0, 0.08)
    assert (cfg.lr, cfg.lr_after, cfg.epochs) == (1e-5, 0.5e-5, 100)
    assert cfg.lr_at(49) == 1e-5 and cfg.lr_at(50) == 0.5e-5


@pytest.mark.parametrize("kw", [dict(tau=0), dict(beta=-1), dict(epochs=0)])
def test_config_validation(kw):
    with pytest.raises(InputError):
        TrainConfig(**kw)


def test_zero_lr_leaves_params():
    samples = small_samples(2)
    cfg = small_cfg(lr=0.0, lr_after=0.0, epochs=1)
    ref = {k: v.clone() for k, v in build_model(cfg).state_dict().items()}
    model, log = train(samples, cfg)
    assert all(torch.equal(ref[k], v) for k, v in model.state_dict().items())
    assert set(log[0]) == {"epoch", "lr", "l_r", "l_c", "l_p", "l_total"}


def test_seeded_rerun_identical():
    samples = small_samples(3)
    cfg = small_cfg(epochs=2, lr=1e-4)
    m1, l1 = train(samples, cfg)
    m2, l2 = train(samples, cfg)
    assert log_lines(l1) == log_lines(l2)
    assert checkpoint.encode(m1.state_dict()) == checkpoint.encode(m2.state_dict())


def test_log_lines_are_json():
    recs = [{"epoch": 0, "l_total": 1.5}, {"epoch": 1, "l_total": 1.25}]
    lines = log_lines(recs).splitlines()
    assert [json.loads(x) for x in lines] == recs


def test_l_p_improves_median_over_seeds():
    samples = small_samples(6)
    drops = []
    for seed in range(5):
        _, log = train(samples, small_cfg(epochs=15, lr=1e-4, lr_after=1e-4, seed=seed))
        drops.append(log[0]["l_p"] - log[-1]["l_p"])
    assert np.median(drops) > 0


def test_divergence_reports_epoch():
    s = small_samples(1)[0]
    face = s.face.copy()
    face[0, 0, 0] = np.inf
    bad = Sample("bad", face, s.back, s.glob, s.bvp, s.hr_bpm)
    with pytest.raises(DivergenceError) as err:
        train([bad], small_cfg(epochs=2))
    assert err.value.epoch == 0


def test_shape_contract():
    s = random_sample(SMALL, 0)
    with pytest.raises(ContractError):
        train([s], TrainConfig(epochs=1))
    with pytest.raises(InputError):
        train([], small_cfg())


def test_evaluate_rows():
    samples = small_samples(3)
    model = build_model(small_cfg())
    rows, rep = evaluate(model, samples)
    assert [r["clip_id"] for r in rows] == ["c0", "c1", "c2"]
    assert rep.n_clips == 3 and np.isfinite(rep.mae)


class TestGradCheck:
    def test_quadratic_machine_precision(self):
        a = torch.randn(30, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        w = torch.randn(30, dtype=torch.float64, requires_grad=True)
        err = grad_check(lambda: ((w - a) ** 2).sum() + 0.5 * (w ** 2).sum(), [w], 1e-4, 30)
        assert err < 1e-7  # exact up to round-off amplified by 1/eps

    def test_eps_range(self):
        w = torch.zeros(3, dtype=torch.float64, requires_grad=True)
        for eps in (1e-7, 1e-2):
            with pytest.raises(InputError):
                grad_check(lambda: (w ** 2).sum(), [w], eps)

    def test_non_finite_aborts(self):
        w = torch.zeros(3, dtype=torch.float64, requires_grad=True)
        with pytest.raises(GradCheckAborted):
            grad_check(lambda: (w / w).sum(), [w], 1e-5)

    def test_detects_wrong_gradient(self):
        w = torch.randn(10, dtype=torch.float64, requires_grad=True)

        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                ctx.save_for_backward(x)
                return x ** 3

            @staticmethod
            def backward(ctx, g):
                (x,) = ctx.saved_tensors
                return g * 2 * x ** 2   # should be 3 x^2

        assert grad_check(lambda: Wrong.apply(w).sum(), [w], 1e-5, 10) > 0.1

    def test_model_losses(self):
        errs = gradcheck_suite(seed=0, n_coords=200)
        assert set(errs) == {"l_p", "l_r", "l_c"}
        assert errs["l_p"] < 1e-4 and max(errs.values()) < 1e-3


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = build_model(small_cfg(seed=3))
        path = tmp_path / "m.pgck"
        checkpoint.save(path, model)
        again = checkpoint.load(path)
        assert again.cfg == model.cfg
        for (k, v), (k2, v2) in zip(model.state_dict().items(), again.state_dict().items()):
            assert k == k2 and torch.equal(v, v2)
        checkpoint.save(tmp_path / "m2.pgck", again)
        assert path.read_bytes() == (tmp_path / "m2.pgck").read_bytes()

    def test_layout(self):
        state = {"w": torch.arange(6.0).reshape(2, 3)}
        buf = checkpoint.encode(state)
        assert buf[:4] == b"PGCK"
        assert buf[4:10] == (1).to_bytes(2, "little") + (1).to_bytes(4, "little")
        assert buf[10:13] == (1).to_bytes(2, "little") + b"w"
        assert buf[13] == 2 and buf[14:22] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert np.array_equal(np.frombuffer(buf[22:], "<f4"), np.arange(6.0))

    @pytest.mark.parametrize("cut", [3, 12, 30])
    def test_truncation(self, cut):
        from bgrppg.errors import FormatError
        buf = checkpoint.encode({"w": torch.ones(4, 4)})
        with pytest.raises(FormatError, match="byte"):
            checkpoint.decode(buf[:cut])

    def test_bad_magic(self):
        from bgrppg.errors import FormatError
        with pytest.raises(FormatError, match="magic"):
            checkpoint.decode(b"XXXX" + bytes(20))
