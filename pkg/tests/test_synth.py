import numpy as np
import pytest

from xcal import metrics
from xcal.core import PredictionBlock
from xcal.synth import (
    Distortion,
    SyntheticWorld,
    analytic_ece,
    apply_temperature,
    distort,
    generate_world,
    iter_blocks,
)


class TestGenerateWorld:
    def test_same_seed_identical(self):
        a = generate_world(2000, 300, 5, 1.0, seed=11)
        b = generate_world(2000, 300, 5, 1.0, seed=11)
        assert np.array_equal(a.pool_labels, b.pool_labels)
        assert np.array_equal(a.eta, b.eta)
        assert np.array_equal(a.y, b.y)

    def test_different_seed_differs(self):
        a = generate_world(500, 300, 5, 1.0, seed=11)
        b = generate_world(500, 300, 5, 1.0, seed=12)
        assert not np.array_equal(a.eta, b.eta)

    def test_block_streaming_matches_full(self):
        full = generate_world(10_000, 200, 5, 1.0, seed=3)
        offset_seen = 0
        for offset, block in iter_blocks(10_000, 200, 5, 1.0, seed=3):
            stop = offset + block.n
            assert np.array_equal(block.pool_labels, full.pool_labels[offset:stop])
            assert np.array_equal(block.eta, full.eta[offset:stop])
            assert np.array_equal(block.y, full.y[offset:stop])
            offset_seen = stop
        assert offset_seen == 10_000

    def test_expected_positives_near_five(self):
        world = generate_world(30_000, 500, 5, 1.0, seed=4)
        assert world.y.sum() / world.n == pytest.approx(5.0, abs=0.1)

    def test_head_labels_dominate_for_large_exponent(self):
        world = generate_world(20_000, 1000, 5, 2.5, seed=5)
        labels = world.pool_labels[world.y.astype(bool)]
        head_cut = world.m // 100  # top 1% of label ids
        head_mass = np.mean(labels < head_cut)
        assert head_mass > 0.5

    def test_k_larger_than_m_rejected(self):
        with pytest.raises(ValueError, match="k exceeds label count"):
            generate_world(10, 3, 5, 1.0, seed=0)

    def test_pool_always_covers_k(self):
        # huge exponent: pools collapse onto a few head labels, fill keeps k
        world = generate_world(3000, 50, 5, 6.0, seed=6)
        assert int(world.pool_sizes.min()) >= 5
        valid = world.pool_labels >= 0
        for i in range(0, 3000, 517):
            row = world.pool_labels[i][valid[i]]
            assert len(np.unique(row)) == len(row)

    def test_identity_scores_are_calibrated(self):
        world = generate_world(100_000, 300, 5, 1.0, seed=7)
        dump = distort(world, Distortion("identity"))
        ece, _ = metrics.ece_at_k(dump, world.truth_block(), 5)
        assert ece <= 0.01


class TestDistortion:
    def test_parse(self):
        assert Distortion.parse("temperature:0.5") == Distortion("temperature", 0.5)
        assert Distortion.parse("identity") == Distortion("identity")
        with pytest.raises(ValueError):
            Distortion.parse("banana")
        with pytest.raises(ValueError):
            Distortion.parse("temperature")  # missing parameter
        with pytest.raises(ValueError):
            Distortion.parse("identity:2")

    def test_identity_returns_eta(self):
        world = generate_world(200, 100, 3, 1.0, seed=8)
        dump = distort(world, Distortion("identity"))
        pairs = metrics.topk_pairs(dump, None, 3)
        eta = world.eta_lookup(pairs.ids, pairs.labels)
        assert np.array_equal(pairs.conf, eta)

    def test_temperature_invertible(self):
        world = generate_world(500, 100, 3, 1.0, seed=9)
        dump = distort(world, Distortion("temperature", 0.5))
        recovered = apply_temperature(dump.probs, 1.0 / 0.5)
        pairs = metrics.topk_pairs(dump, None, 3)
        eta = world.eta_lookup(pairs.ids, pairs.labels)
        assert np.max(np.abs(recovered - eta)) < 1e-12

    def test_midrange_compresses_toward_half(self):
        world = generate_world(500, 100, 3, 1.0, seed=10)
        plain = distort(world, Distortion("identity"))
        squeezed = distort(world, Distortion("midrange", 2.0))
        assert np.all(np.abs(squeezed.probs - 0.5) <= np.abs(plain.probs - 0.5) + 1e-15)

    def test_softmax_divides_by_eta_sum(self):
        world = generate_world(300, 100, 3, 1.0, seed=11)
        dump = distort(world, Distortion("softmax_normalize"))
        pairs = metrics.topk_pairs(dump, None, 3)
        eta = world.eta_lookup(pairs.ids, pairs.labels)
        sums = world.eta.sum(axis=1)
        expected = eta / sums[pairs.ids]
        assert np.max(np.abs(pairs.conf - expected)) < 1e-15

    def test_every_distortion_preserves_topk_sets(self):
        world = generate_world(2000, 300, 5, 1.0, seed=12)
        base = distort(world, Distortion("identity"))
        for d in (
            Distortion("temperature", 0.5),
            Distortion("temperature", 2.0),
            Distortion("midrange", 2.0),
            Distortion("softmax_normalize"),
        ):
            other = distort(world, d)
            for i in range(0, 2000, 401):
                lo, hi = base.row_ptr[i], base.row_ptr[i + 1]
                assert set(base.labels[lo:hi].tolist()) == set(other.labels[lo:hi].tolist())

    def test_probs_stay_in_unit_interval(self):
        world = generate_world(1000, 100, 5, 1.0, seed=13)
        for d in (
            Distortion("temperature", 0.25),
            Distortion("temperature", 4.0),
            Distortion("midrange", 3.0),
            Distortion("softmax_normalize"),
        ):
            dump = distort(world, d)
            assert np.all((dump.probs >= 0) & (dump.probs <= 1))


class TestAnalyticEce:
    def test_identity_is_exactly_zero(self):
        world = generate_world(5000, 200, 5, 1.0, seed=14)
        dump = distort(world, Distortion("identity"))
        assert analytic_ece(world, dump, 5) < 0.005

    def test_monte_carlo_close_to_analytic(self):
        world = generate_world(100_000, 500, 5, 1.0, seed=15)
        dump = distort(world, Distortion("temperature", 0.5))
        mc, _ = metrics.ece_at_k(dump, world.truth_block(), 5)
        an = analytic_ece(world, dump, 5)
        assert abs(mc - an) < 0.01

    def test_counterexample_world(self):
        # two instances, two labels, conditionals from the classic fixture:
        # marginally calibrated scorer whose top-1 selection is off by 5%
        world = SyntheticWorld(
            n=2, m=2, k=1, seed=0, tail_exponent=1.0,
            pool_labels=np.array([[0, 1], [0, 1]], dtype=np.int64),
            eta=np.array([[0.8, 0.9], [0.6, 0.4]]),
            y=np.zeros((2, 2), np.uint8),
            pool_sizes=np.array([2, 2], dtype=np.int64),
        )
        dump = PredictionBlock(
            ids=np.array([0, 1], dtype=np.int64),
            labels=np.array([1, 0], dtype=np.int64),
            probs=np.array([0.9, 0.7]),
            row_ptr=np.array([0, 1, 2], dtype=np.int64),
        )
        assert analytic_ece(world, dump, 1) == pytest.approx(0.05, abs=1e-9)

    def test_unknown_instance_rejected(self):
        world = generate_world(10, 50, 3, 1.0, seed=16)
        dump = distort(world, Distortion("identity"))
        dump.ids[-1] = 99
        with pytest.raises(ValueError, match="unknown instance"):
            analytic_ece(world, dump, 3)


class TestRecalibrationOracles:
    def test_isotonic_recovers_inverse_temperature_map(self):
        from xcal.calibrate import apply_isotonic
        from xcal.pipeline import joint_calibrate

        world = generate_world(100_000, 500, 5, 1.0, seed=17)
        dump = distort(world, Distortion("temperature", 0.5))
        model = joint_calibrate(dump, world.truth_block(), "isotonic", 5)
        pairs = metrics.topk_pairs(dump, None, 5)
        support = np.quantile(pairs.conf, [0.02, 0.98])
        grid = np.linspace(support[0], support[1], 400)
        fitted = apply_isotonic(model, grid)
        true_inverse = apply_temperature(grid, 2.0)  # undo T=0.5
        assert np.mean(np.abs(fitted - true_inverse)) <= 0.02

    def test_platt_beats_nothing_but_loses_to_isotonic_on_midrange(self):
        from xcal.pipeline import CalibrationConfig, kfold_recalibrate

        world = generate_world(100_000, 500, 5, 1.0, seed=18)
        truth = world.truth_block()
        dump = distort(world, Distortion("midrange", 2.0))
        pre, _ = metrics.ece_at_k(dump, truth, 5)
        post = {}
        for method in ("isotonic", "platt"):
            res = kfold_recalibrate(dump, truth, CalibrationConfig(method=method, k=5, folds=5, seed=1))
            post[method], _ = metrics.ece_at_k(res.block, truth, 5)
        assert post["isotonic"] < post["platt"] - 0.005
        assert post["platt"] < pre
