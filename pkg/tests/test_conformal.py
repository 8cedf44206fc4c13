import json
import math

import numpy as np
import pytest

from cptube.conformal import (
    MarginCase,
    OcpConfig,
    ThreadBank,
    coverage_bound,
    initial_margin,
    margin_from_threshold,
    ocp_update,
    pinball_loss,
)
from cptube.errors import ConfigError, DataIntegrityError, SequencingError


class TestPinballLoss:
    def test_zero_at_origin(self):
        assert pinball_loss(0.0, 0.1) == 0.0

    def test_positive_branch(self):
        assert pinball_loss(2.0, 0.1) == pytest.approx(1.8, abs=1e-15)

    def test_negative_branch(self):
        assert pinball_loss(-2.0, 0.1) == pytest.approx(0.2, abs=1e-15)

    def test_nonnegative_and_convex_piecewise(self):
        rng = np.random.default_rng(0)
        for r in rng.uniform(-5, 5, size=200):
            alpha = rng.uniform(0.01, 0.99)
            val = pinball_loss(r, alpha)
            assert val >= 0.0
            assert (val == 0.0) == (r == 0.0)


class TestOcpUpdate:
    def test_miss_branch(self):
        assert ocp_update(1.0, 2.0, 0.1, 0.1) == pytest.approx(1.09, abs=1e-15)

    def test_cover_branch(self):
        assert ocp_update(1.0, 0.5, 0.1, 0.1) == pytest.approx(0.99, abs=1e-15)

    def test_tie_counts_as_covered(self):
        assert ocp_update(1.0, 1.0, 0.1, 0.1) == pytest.approx(0.99, abs=1e-15)

    def test_rejects_non_finite_score(self):
        with pytest.raises(DataIntegrityError):
            ocp_update(1.0, math.nan, 0.1, 0.1)
        with pytest.raises(DataIntegrityError):
            ocp_update(1.0, math.inf, 0.1, 0.1)


class TestCoverageBound:
    def test_direct_values(self):
        assert coverage_bound(1.0, 0.5, 0.5, 10_000) == pytest.approx(3e-4, rel=1e-12)
        assert coverage_bound(1.0, 1.0, 1.0, 1) == pytest.approx(2.0, rel=1e-12)

    def test_adversarial_prefix_property(self):
        # Uniform scores in [0, B]; the prefix coverage error never exceeds
        # the bound. Derived by simulating the recursion directly.
        alpha, eta, bound_b = 0.1, 0.5, 1.0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            q = 0.0
            covered = 0
            for k in range(1, 3001):
                s = rng.uniform(0.0, bound_b)
                if s <= q:
                    covered += 1
                q = ocp_update(q, s, eta, alpha)
                err = abs(covered / k - (1 - alpha))
                assert err <= coverage_bound(bound_b, eta, eta, k)


class TestConfig:
    def test_thread_count(self):
        assert OcpConfig(horizon=0.5, dt=0.05).threads == 10

    def test_rejects_non_divisible_horizon(self):
        with pytest.raises(ConfigError):
            OcpConfig(horizon=0.52, dt=0.05)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha": 0.0},
            {"alpha": 1.0},
            {"eta1": 0.0},
            {"d_lipschitz": -1.0},
            {"q_init": -0.1},
            {"eta_schedule": "linear"},
        ],
    )
    def test_rejects_bad_fields(self, kwargs):
        with pytest.raises(ConfigError):
            OcpConfig(**kwargs)

    def test_eta_schedules(self):
        const = OcpConfig(eta1=0.4)
        assert const.eta_at(1) == const.eta_at(999) == 0.4
        decay = OcpConfig(eta1=0.4, eta_schedule="sqrt_decay")
        assert decay.eta_at(4) == pytest.approx(0.2)
        assert decay.eta_at(0) == decay.eta_at(1) == 0.4


def bank_cfg(threads=2, eta1=0.1, alpha=0.1, q_init=0.0):
    return OcpConfig(alpha=alpha, eta1=eta1, q_init=q_init, horizon=float(threads), dt=1.0)


class TestThreadBank:
    def test_single_thread_updated_miss(self):
        bank = ThreadBank(config=bank_cfg(), thresholds=np.array([1.0, 5.0]))
        active = bank.update(4, 2.0)
        assert active == pytest.approx(1.09, abs=1e-15)
        assert bank.thresholds.tolist() == pytest.approx([1.09, 5.0], abs=1e-15)

    def test_single_thread_updated_cover(self):
        bank = ThreadBank(config=bank_cfg(), thresholds=np.array([1.0, 5.0]))
        active = bank.update(5, 2.0)
        assert active == pytest.approx(4.99, abs=1e-15)
        assert bank.thresholds.tolist() == pytest.approx([1.0, 4.99], abs=1e-15)

    def test_other_threads_untouched_by_snapshot(self):
        cfg = bank_cfg(threads=5)
        bank = ThreadBank.from_config(cfg)
        rng = np.random.default_rng(3)
        for k in range(200):
            before = bank.thresholds.copy()
            j = bank.active_thread(k)
            bank.update(k, float(rng.uniform(0, 1)))
            changed = np.nonzero(bank.thresholds != before)[0]
            assert changed.tolist() in ([], [j])

    def test_sequencing_error(self):
        bank = ThreadBank.from_config(bank_cfg())
        bank.update(7, 1.0)
        with pytest.raises(SequencingError):
            bank.update(7, 1.0)
        with pytest.raises(SequencingError):
            bank.update(3, 1.0)

    def test_long_stream_per_thread_coverage(self):
        # Constant score 1.0, eta 0.5, alpha 0.1, P=4: each thread's covered
        # fraction lands within (B + eta1) / (eta * K_j) of 0.9.
        cfg = bank_cfg(threads=4, eta1=0.5)
        bank = ThreadBank.from_config(cfg)
        covered = np.zeros(4)
        counts = np.zeros(4)
        for k in range(10_000):
            j = bank.active_thread(k)
            if 1.0 <= bank.thresholds[j]:
                covered[j] += 1
            counts[j] += 1
            bank.update(k, 1.0)
        bound = coverage_bound(1.0, 0.5, 0.5, int(counts.min()))
        assert np.all(np.abs(covered / counts - 0.9) <= bound)

    @pytest.mark.parametrize("alpha", [0.05, 0.1, 0.2])
    def test_long_run_coverage_tracks_alpha(self, alpha):
        # Pooled coverage converges to 1 - alpha for any target rate.
        cfg = OcpConfig(alpha=alpha, eta1=0.2, horizon=4.0, dt=1.0)
        bank = ThreadBank.from_config(cfg)
        rng = np.random.default_rng(int(alpha * 1000))
        covered = 0
        total = 20_000
        for k in range(total):
            s = float(rng.uniform(0.0, 1.0))
            if s <= bank.thresholds[bank.active_thread(k)]:
                covered += 1
            bank.update(k, s)
        assert abs(covered / total - (1.0 - alpha)) <= 0.05

    def test_threshold_boundedness(self):
        # Scores bounded by B keep every threshold within q_init + B + eta1.
        cfg = bank_cfg(threads=3, eta1=0.3, q_init=0.5)
        bank = ThreadBank.from_config(cfg)
        rng = np.random.default_rng(11)
        bound_b = 2.0
        for k in range(5000):
            bank.update(k, float(rng.uniform(0, bound_b)))
            assert np.all(np.abs(bank.thresholds) <= cfg.q_init + bound_b + cfg.eta1)

    def test_staggered_isolation_bit_for_bit(self):
        # A thread fed through the bank matches a lone threshold fed the same
        # (k, score) subsequence under the same step-size schedule.
        cfg = OcpConfig(alpha=0.2, eta1=0.3, eta_schedule="sqrt_decay", horizon=5.0, dt=1.0)
        bank = ThreadBank.from_config(cfg)
        rng = np.random.default_rng(8)
        scores = rng.uniform(0, 2, size=600)
        histories = {j: [] for j in range(5)}
        for k in range(600):
            bank.update(k, float(scores[k]))
            histories[k % 5].append((k, float(scores[k])))
        for j in range(5):
            q = cfg.q_init
            for k, s in histories[j]:
                q = ocp_update(q, s, cfg.eta_at(k), cfg.alpha)
            assert q == bank.thresholds[j]  # bit-for-bit

    def test_checkpoint_roundtrip(self, tmp_path):
        cfg = bank_cfg(threads=4, eta1=0.25)
        bank = ThreadBank.from_config(cfg)
        for k in range(37):
            bank.update(k, float(np.sin(k)) + 1.0)
        path = tmp_path / "bank.json"
        bank.save(path)
        restored = ThreadBank.load(cfg, path)
        assert restored.thresholds.tolist() == bank.thresholds.tolist()
        assert restored.step_index == bank.step_index
        assert restored.update_counts.tolist() == bank.update_counts.tolist()
        # and the restored bank continues identically
        a = bank.update(37, 0.5)
        b = restored.update(37, 0.5)
        assert a == b

    def test_checkpoint_is_json(self, tmp_path):
        bank = ThreadBank.from_config(bank_cfg())
        path = tmp_path / "bank.json"
        bank.save(path)
        payload = json.loads(path.read_text())
        assert set(payload) == {"thresholds", "step_index", "update_counts"}


class TestMargin:
    def cfg(self, lip=1.0, horizon=0.5):
        return OcpConfig(d_lipschitz=lip, horizon=horizon, dt=horizon)

    def test_sqrt_case(self):
        rec = margin_from_threshold(0.1, self.cfg())
        assert rec.case is MarginCase.SQRT
        assert rec.d_bar == pytest.approx(math.sqrt(0.2), abs=1e-12)

    def test_trapezoid_case(self):
        rec = margin_from_threshold(0.2, self.cfg())
        assert rec.case is MarginCase.TRAPEZOID
        assert rec.d_bar == pytest.approx(0.65, abs=1e-12)

    def test_continuity_at_case_boundary(self):
        boundary = 0.5 * 1.0 * 0.5**2
        sqrt_value = math.sqrt(2.0 * 1.0 * boundary)
        trap_value = boundary / 0.5 + 0.5 * 1.0 * 0.5
        assert abs(sqrt_value - trap_value) <= 1e-12
        assert margin_from_threshold(boundary, self.cfg()).d_bar == pytest.approx(0.5, abs=1e-12)

    def test_negative_threshold_clamped(self):
        rec = margin_from_threshold(-3.0, self.cfg())
        assert rec.d_bar == 0.0
        assert rec.case is MarginCase.SQRT

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(21)
        for _ in range(10_000):
            lip = float(rng.uniform(0.05, 20.0))
            horizon = float(rng.uniform(0.05, 3.0))
            cfg = OcpConfig(d_lipschitz=lip, horizon=horizon, dt=horizon)
            q1, q2 = sorted(rng.uniform(0.0, 5.0, size=2))
            m1 = margin_from_threshold(float(q1), cfg).d_bar
            m2 = margin_from_threshold(float(q2), cfg).d_bar
            assert m1 <= m2 + 1e-15
            assert m1 >= 0.0

    def test_initial_margin(self):
        cfg = OcpConfig(d_init=4.5)
        rec = initial_margin(cfg, step=3)
        assert rec.case is MarginCase.INITIAL
        assert rec.d_bar == 4.5
        assert rec.thread == 3 % cfg.threads
        assert math.isnan(rec.q_active)
