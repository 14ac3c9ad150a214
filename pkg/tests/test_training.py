import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rdeepsc import diagnostics
from rdeepsc.channel import ChannelConfig
from rdeepsc.engine import Adam, Tensor, finite_diff_check, grad, no_record, ops, record
from rdeepsc.text import NoiseSpec, VerbLexicon, build_vocab, desk_corpus_path, encode, inject_literal_noise, load_corpus
from rdeepsc.training import (
    AdversarialConfig,
    MiEstimator,
    NonFiniteLoss,
    TrainConfig,
    adversarial_step,
    cross_entropy_loss,
    detection_bce,
    draw_step_noise,
    estimate_mi,
    fgm_perturbation,
    forward_losses,
    make_batch,
    mine_mi_lower_bound,
    plain_step,
    total_loss,
    train,
)
from rdeepsc.transceiver import ModelConfig, RDeepSC

SMALL = dict(d_model=16, n_heads=2, d_ff=32, k_sym=2, d_det=8)


@pytest.fixture(scope="module")
def corpus():
    return load_corpus(desk_corpus_path())


@pytest.fixture(scope="module")
def vocab(corpus):
    return build_vocab(corpus)


@pytest.fixture(scope="module")
def verbs():
    return VerbLexicon.bundled()


def small_model(vocab, seed=0, **kw):
    return RDeepSC(ModelConfig(vocab_size=len(vocab), **{**SMALL, **kw}), seed=seed)


class TestCrossEntropy:
    def test_perfect(self):
        logits = Tensor(np.full((1, 3, 4), -50.0))
        targets = np.array([[1, 2, 3]])
        logits.data[0, [0, 1, 2], [1, 2, 3]] = 50.0
        assert cross_entropy_loss(logits, targets).item() < 1e-12

    def test_uniform(self):
        assert cross_entropy_loss(Tensor(np.zeros((2, 5, 7))), np.ones((2, 5), int)).item() == pytest.approx(math.log(7))

    def test_pad_ignored(self):
        rng = np.random.default_rng(0)
        logits = Tensor(rng.standard_normal((1, 4, 6)))
        a = cross_entropy_loss(logits, np.array([[3, 4, 0, 0]])).item()
        b = cross_entropy_loss(Tensor(logits.data[:, :2]), np.array([[3, 4]])).item()
        assert a == pytest.approx(b, abs=1e-15)

    def test_all_pad(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(Tensor(np.zeros((1, 2, 3))), np.zeros((1, 2), int))

    def test_gradient(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 3, 5)))
        t = np.array([[1, 2, 0], [4, 4, 3]])
        assert finite_diff_check(lambda z: cross_entropy_loss(z, t), x) < 1e-4


class TestBce:
    def test_perfect(self):
        labels = np.array([0.0, 1.0, 1.0, 0.0])
        assert detection_bce(Tensor(labels), labels).item() == pytest.approx(-math.log(1 - 1e-7), rel=1e-6)

    def test_half(self):
        assert detection_bce(Tensor(np.full(6, 0.5)), np.array([0, 1, 0, 1, 1, 1])).item() == pytest.approx(math.log(2))

    def test_mismatch(self):
        with pytest.raises(ValueError):
            detection_bce(Tensor(np.full(3, 0.5)), np.zeros(4))

    def test_gradient(self):
        rng = np.random.default_rng(2)
        p = Tensor(rng.uniform(0.05, 0.95, size=(2, 6)))
        labels = rng.integers(0, 2, size=(2, 6))
        valid = np.ones((2, 6), bool)
        valid[1, 4:] = False
        assert finite_diff_check(lambda z: detection_bce(z, labels, valid), p) < 1e-4


class TestMine:
    def test_zero_network(self):
        est = MiEstimator(4)
        for p in est.parameters():
            p.data[...] = 0.0
        rng = np.random.default_rng(0)
        x, y = rng.standard_normal((10, 2)), rng.standard_normal((10, 2))
        assert mine_mi_lower_bound(x, y, est, rng=rng).item() == 0.0

    def test_needs_two(self):
        with pytest.raises(ValueError):
            mine_mi_lower_bound(np.ones((1, 2)), np.ones((1, 2)), MiEstimator(4))

    def test_gradient_wrt_frames(self):
        rng = np.random.default_rng(3)
        est = MiEstimator(4, hidden=8, seed=1)
        x, y = Tensor(rng.standard_normal((6, 2))), Tensor(rng.standard_normal((6, 2)))
        perm = rng.permutation(6)
        assert finite_diff_check(lambda z: mine_mi_lower_bound(z, y, est, perm), x) < 1e-4
        assert finite_diff_check(lambda z: mine_mi_lower_bound(x, z, est, perm), y) < 1e-4

    @pytest.mark.parametrize("rho,target,tol", [(0.9, -0.5 * math.log(1 - 0.81), 0.15), (0.0, 0.0, 0.05)])
    def test_gaussian_oracle(self, rho, target, tol):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((20000, 1))
        y = rho * x + math.sqrt(1 - rho**2) * rng.standard_normal((20000, 1))
        est = estimate_mi(x, y, steps=2000, seed=0)
        if rho:
            assert abs(est - target) <= tol
            assert est <= target + 0.1  # a lower bound, up to estimator noise
        else:
            assert est <= tol


class TestTotalLoss:
    def parts(self):
        return Tensor(2.5), Tensor(0.7), Tensor(0.3)

    def test_reduces_to_ce(self):
        ce, mi, bce = self.parts()
        total, br = total_loss(ce, mi, bce, 0.0, 0.0)
        assert total.item() == ce.item() and br.total == br.l_ce

    def test_sign(self):
        ce, mi, bce = self.parts()
        total, br = total_loss(ce, mi, bce, 0.05, 1.0)
        assert total.item() == pytest.approx(2.5 - 0.05 * 0.7 + 0.3)
        assert (br.alpha, br.beta) == (0.05, 1.0)

    def test_perfect_detection(self):
        labels = np.array([0.0, 1.0])
        bce = detection_bce(Tensor(labels), labels)
        total, _ = total_loss(Tensor(2.5), Tensor(0.7), bce, 0.05, 1.0)
        assert total.item() == pytest.approx(2.5 - 0.05 * 0.7, abs=1e-6)

    def test_non_finite(self):
        with pytest.raises(NonFiniteLoss):
            total_loss(Tensor(float("nan")), Tensor(0.0), Tensor(0.0), 0.0, 0.0)

    def test_gradient_through_model(self, vocab, corpus, verbs):
        model = small_model(vocab, seed=4)
        est = MiEstimator(4 * model.cfg.k_sym, hidden=8, seed=2)
        samples = [inject_literal_noise(encode(s, vocab), NoiseSpec(0.2, seed=i), vocab, verbs) for i, s in enumerate(corpus[:3])]
        batch = make_batch(samples)
        noise = draw_step_noise(model, batch, ChannelConfig("awgn", 10.0), np.random.default_rng(0))
        for name in ("channel_encoder.weight", "detector.head.weight", "decoder.project.bias"):
            param = dict(model.named_parameters())[name]
            err = finite_diff_check(
                lambda _: forward_losses(model, est, batch, noise, 0.05, 1.0)[0], param, coords=10, rng=np.random.default_rng(1)
            )
            assert err < 1e-4
        err = finite_diff_check(lambda _: forward_losses(model, est, batch, noise, 0.05, 1.0)[0], est.inner.weight, coords=10)
        assert err < 1e-4


class TestFgm:
    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-1e3, 1e3)), st.floats(1e-3, 10))
    def test_norm(self, g, eps):
        if not np.any(g):
            return
        n = fgm_perturbation(g, eps)
        assert abs(np.linalg.norm(n) - eps) < 1e-9

    def test_scale_invariant(self):
        g = np.random.default_rng(0).standard_normal((5, 3))
        np.testing.assert_allclose(fgm_perturbation(g, 0.5), fgm_perturbation(10 * g, 0.5), atol=1e-15)

    def test_zero_flagged(self):
        with diagnostics.collect() as flags:
            n = fgm_perturbation(np.zeros((2, 2)), 0.5)
        assert not np.any(n) and flags["zero_gradient"] == 1

    def test_per_sentence(self):
        g = np.random.default_rng(1).standard_normal((4, 6, 3))
        g[2] = 0.0
        n = fgm_perturbation(g, 0.5, axis=(-2, -1))
        norms = np.sqrt((n**2).sum(axis=(1, 2)))
        np.testing.assert_allclose(norms[[0, 1, 3]], 0.5, atol=1e-12)
        assert norms[2] == 0.0

    def test_first_order_ascent(self):
        rng = np.random.default_rng(5)
        ascents = 0
        for _ in range(100):
            w = Tensor(rng.standard_normal((4, 4)))
            x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)

            def loss(z):
                return ops.sum(ops.tanh(ops.matmul(z, w)) ** 2)

            with record():
                (g,) = grad(loss(x), [x])
            step = fgm_perturbation(g, 1e-3)
            with no_record():
                ascents += loss(Tensor(x.data + step)).item() >= loss(x).item()
        assert ascents >= 95


class TestSteps:
    def setup_batch(self, vocab, corpus, verbs):
        model = small_model(vocab, seed=1)
        est = MiEstimator(4 * model.cfg.k_sym, hidden=8, seed=3)
        samples = [inject_literal_noise(encode(s, vocab), NoiseSpec(0.2, seed=i), vocab, verbs) for i, s in enumerate(corpus[:8])]
        batch = make_batch(samples)
        noise = draw_step_noise(model, batch, ChannelConfig("awgn", 12.0), np.random.default_rng(2))
        return model, est, batch, noise

    def test_zero_epsilon_matches_plain(self, vocab, corpus, verbs):
        results = []
        for adv in (False, True):
            model, est, batch, noise = self.setup_batch(vocab, corpus, verbs)
            opt = Adam(model.parameters() + est.parameters(), lr=1e-3)
            cfg = TrainConfig(adv=AdversarialConfig(0.0, adv))
            if adv:
                adversarial_step(model, est, opt, batch, noise, cfg)
            else:
                plain_step(model, est, opt, batch, noise, cfg)
            results.append([p.data.copy() for p in opt.params])
        for a, b in zip(*results):
            np.testing.assert_array_equal(a, b)

    def test_adversarial_step_descends(self, vocab, corpus, verbs):
        model, est, batch, noise = self.setup_batch(vocab, corpus, verbs)
        opt = Adam(model.parameters() + est.parameters(), lr=1e-4)
        cfg = TrainConfig(adv=AdversarialConfig(0.5, True))
        counter = {"adv_forwards": 0}

        def combined():
            with no_record():
                return forward_losses(model, est, batch, noise, 0.05, 1.0)[0].item()

        before = combined()
        clean, adv = adversarial_step(model, est, opt, batch, noise, cfg, counter)
        assert counter["adv_forwards"] == 1
        assert adv.l_ce >= clean.l_ce  # the attack raises the loss it ascends
        assert combined() < before


class TestTrain:
    def test_memorize_one_sentence(self, vocab, corpus, verbs):
        model = small_model(vocab, seed=0)
        cfg = TrainConfig(epochs=200, batch_size=1, lr=3e-3, val_size=0)
        result = train(model, corpus[:1], [], vocab, verbs, NoiseSpec(0.0), ChannelConfig("identity"), cfg)
        assert result.history[-1]["l_ce"] < 0.05

    def test_deterministic_and_resume(self, tmp_path, vocab, corpus, verbs):
        args = (corpus[:48], corpus[2900:2910], vocab, verbs, NoiseSpec(0.2, seed=3), ChannelConfig("awgn", 12.0))
        cfg = TrainConfig(epochs=2, batch_size=16, seed=7, val_size=10, adv=AdversarialConfig(0.5, True))
        full = train(small_model(vocab), *args, cfg, out_dir=tmp_path / "a")
        again = train(small_model(vocab), *args, cfg, out_dir=tmp_path / "b")
        assert full.history == again.history
        resumed_model = small_model(vocab)
        resumed = train(resumed_model, *args, cfg, out_dir=tmp_path / "c", resume=tmp_path / "a" / "epoch_001.rdsc")
        assert resumed.history == full.history[1:]
        assert (tmp_path / "a" / "epoch_002.rdsc").read_bytes() == (tmp_path / "c" / "epoch_002.rdsc").read_bytes()
        assert full.counters["adv_forwards"] == full.counters["steps"] == 6

    def test_log_columns(self, tmp_path, vocab, corpus, verbs):
        args = (corpus[:8], corpus[2900:2902], vocab, verbs, NoiseSpec(0.2), ChannelConfig("awgn", 12.0))
        for adv in (False, True):
            out = tmp_path / str(adv)
            train(small_model(vocab), *args, TrainConfig(epochs=1, batch_size=4, adv=AdversarialConfig(0.5, adv)), out_dir=out)
            with open(out / "train_log.csv") as fh:
                header = next(csv.reader(fh))
            assert ("adv_total" in header) == adv
            assert header[:6] == ["epoch", "l_ce", "l_mi", "l_bce", "total", "val_bleu"]

    def test_non_finite_aborts(self, vocab, corpus, verbs):
        model = small_model(vocab)
        model.decoder.project.bias.data[:] = np.nan
        with pytest.raises(NonFiniteLoss, match="batch 0"):
            train(model, corpus[:4], [], vocab, verbs, NoiseSpec(0.0), ChannelConfig("identity"), TrainConfig(epochs=1, batch_size=2))
