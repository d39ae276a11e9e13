import numpy as np
import pytest

from deskgrasp import diffcore as dc
from deskgrasp import encoder as enc
from deskgrasp.diffcore import Parameter, Tape, finite_difference_check
from deskgrasp.errors import NeighborhoodTooLarge

CFG = enc.EncoderConfig(stage1_hidden=(8,), feature_global=16,
                        stage2_hidden=(8,), feature_point=8)


@pytest.fixture
def params():
    return enc.init_parameters(CFG, seed=42)


class TestEncode:
    def test_single_point_global_equals_stage1_row(self, params):
        cloud = np.array([[0.01, -0.02, 0.05]])
        bundle = enc.encode(Tape(), cloud, params)
        probe = Tape()
        h1 = params.stage1.forward(probe, probe.const(cloud / enc.COORD_SCALE),
                                   final_relu=True)
        # max over a single row is that row
        assert np.array_equal(bundle.global_feature.value[0], h1.value[0])

    def test_permutation_invariance_bitwise(self, params):
        rng = np.random.default_rng(0)
        cloud = rng.uniform(-0.05, 0.05, (20, 3))
        perm = rng.permutation(20)
        b1 = enc.encode(Tape(), cloud, params)
        b2 = enc.encode(Tape(), cloud[perm], params)
        assert np.array_equal(b1.global_feature.value, b2.global_feature.value)
        assert np.array_equal(b1.per_point.value[perm], b2.per_point.value)

    def test_duplicated_points_leave_global_unchanged(self, params):
        rng = np.random.default_rng(1)
        cloud = rng.uniform(-0.05, 0.05, (15, 3))
        b1 = enc.encode(Tape(), cloud, params)
        b2 = enc.encode(Tape(), np.vstack([cloud, cloud]), params)
        assert np.array_equal(b1.global_feature.value, b2.global_feature.value)

    def test_gradients_match_finite_differences(self, params):
        rng = np.random.default_rng(2)
        cloud = rng.uniform(-0.05, 0.05, (8, 3))
        weights = rng.normal(size=(CFG.feature_point, 1))

        def f(tape):
            bundle = enc.encode(tape, cloud, params)
            proxy = dc.matmul(bundle.per_point, tape.const(weights))
            return dc.add(dc.vsum(proxy), dc.vsum(bundle.global_feature))

        err = finite_difference_check(f, params.parameters(), step=1e-6,
                                      max_coords_per_param=6,
                                      rng=np.random.default_rng(3))
        assert err <= 1e-5

    def test_empty_cloud_rejected(self, params):
        with pytest.raises(ValueError):
            enc.encode(Tape(), np.zeros((0, 3)), params)


class TestNeighborhoods:
    def test_single_neighbor_on_point(self, params):
        rng = np.random.default_rng(4)
        cloud = rng.uniform(-0.05, 0.05, (10, 3))
        tape = Tape()
        bundle = enc.encode(tape, cloud, params)
        q = tape.const(cloud[3:4])
        feat = enc.gather_neighborhood_features(tape, q, cloud, bundle, nn=1)
        f_p = CFG.feature_point
        assert np.array_equal(feat.value[0, :f_p], bundle.per_point.value[3])
        assert np.allclose(feat.value[0, f_p:], 0.0, atol=1e-12)

    def test_full_neighborhood_is_global_max(self, params):
        rng = np.random.default_rng(5)
        cloud = rng.uniform(-0.05, 0.05, (10, 3))
        tape = Tape()
        bundle = enc.encode(tape, cloud, params)
        feat = enc.gather_neighborhood_features(tape, cloud[0], cloud, bundle,
                                                nn=10)
        f_p = CFG.feature_point
        assert np.array_equal(feat.value[0, :f_p],
                              bundle.per_point.value.max(axis=0))

    def test_identical_feature_rows_dominate(self, params):
        cloud = np.tile(np.array([[0.01, 0.02, 0.03]]), (6, 1))
        tape = Tape()
        bundle = enc.encode(tape, cloud, params)
        feat = enc.gather_neighborhood_features(tape, [0.0, 0.0, 0.0], cloud,
                                                bundle, nn=4)
        assert np.array_equal(feat.value[0, :CFG.feature_point],
                              bundle.per_point.value[0])

    def test_all_equal_distances_deterministic(self, params):
        # four points equidistant from the origin: ties resolve to low indices
        cloud = np.array([[0.05, 0, 0.0], [-0.05, 0, 0.0],
                          [0, 0.05, 0.0], [0, -0.05, 0.0]])
        idx = enc.neighborhood_indices(np.zeros((1, 3)), cloud, nn=2)
        assert idx.tolist() == [[0, 1]]

    def test_too_many_neighbors(self, params):
        cloud = np.zeros((3, 3))
        with pytest.raises(NeighborhoodTooLarge):
            enc.neighborhood_indices(np.zeros((1, 3)), cloud, nn=4)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = enc.init_parameters(CFG, seed=7)
        b = enc.init_parameters(CFG, seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.value, pb.value)

    def test_different_seeds_differ(self):
        a = enc.init_parameters(CFG, seed=7)
        b = enc.init_parameters(CFG, seed=8)
        assert any(not np.array_equal(pa.value, pb.value)
                   for pa, pb in zip(a.parameters(), b.parameters()))

    def test_biases_zero(self):
        p = enc.init_parameters(CFG, seed=9)
        for w, b in p.stage1.layers + p.stage2.layers:
            assert np.all(b.value == 0.0)

    def test_xavier_bound_unit_fans(self):
        from deskgrasp.net import xavier_uniform
        rng = np.random.default_rng(10)
        draws = np.array([xavier_uniform(rng, 1, 1)[0, 0] for _ in range(1000)])
        bound = np.sqrt(3.0)  # sqrt(6 / (1 + 1))
        assert np.all(np.abs(draws) <= bound)
        assert np.abs(draws).max() > 0.9 * bound  # spans the range
