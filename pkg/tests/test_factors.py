"""Factor residuals, linearization, and the Levenberg-Marquardt solver."""

import json

import numpy as np
import pytest

from tactrack import geometry
from tactrack.factors import (ConstVelFactor, FactorGraph, GaugeError,
                              Im2ImFactor, Im2PatchFactor, MotionPriorFactor,
                              NoiseModel, OptimizerParams, PriorFactor,
                              eff_key, eff_prior, linearize, obj_key, optimize,
                              vis_prior)
from tactrack.geometry import Pose

from .conftest import random_pose

UNIT = NoiseModel.isotropic(1.0, 1.0)


class TestResiduals:
    def test_prior_zero_at_measurement(self):
        rng = np.random.default_rng(0)
        p = random_pose(rng)
        factor = eff_prior(1, p, UNIT)
        np.testing.assert_allclose(factor.residual({eff_key(1): p}),
                                   np.zeros(6), atol=1e-12)

    def test_const_vel_zero_on_arithmetic_progression(self):
        rng = np.random.default_rng(1)
        o1 = random_pose(rng)
        delta = geometry.exp(rng.uniform(-0.2, 0.2, 6))
        o2 = geometry.compose(o1, delta)
        o3 = geometry.compose(o2, delta)
        factor = ConstVelFactor(3, UNIT)
        values = {obj_key(1): o1, obj_key(2): o2, obj_key(3): o3}
        np.testing.assert_allclose(factor.residual(values), np.zeros(6),
                                   atol=1e-9)

    def test_motion_prior_zero_when_static(self):
        rng = np.random.default_rng(2)
        o = random_pose(rng)
        factor = MotionPriorFactor(2, UNIT)
        values = {obj_key(1): o, obj_key(2): o}
        np.testing.assert_allclose(factor.residual(values), np.zeros(6),
                                   atol=1e-12)

    def test_im2patch_residual_equals_offset_twist(self):
        rng = np.random.default_rng(3)
        o, e = random_pose(rng), random_pose(rng)
        measured = geometry.compose(geometry.inverse(o), e)
        xi = rng.uniform(-1e-4, 1e-4, 6)
        factor = Im2PatchFactor(1, measured, UNIT)
        values = {obj_key(1): o, eff_key(1): geometry.oplus(e, xi)}
        np.testing.assert_allclose(factor.residual(values), xi, atol=1e-9)

    def test_im2im_zero_on_consistent_motion(self):
        rng = np.random.default_rng(4)
        o = random_pose(rng)
        e1, e2 = random_pose(rng), random_pose(rng)
        rel1 = geometry.compose(geometry.inverse(o), e1)
        rel2 = geometry.compose(geometry.inverse(o), e2)
        measured = geometry.compose(geometry.inverse(rel1), rel2)
        factor = Im2ImFactor(2, measured, UNIT)
        values = {obj_key(1): o, eff_key(1): e1, obj_key(2): o, eff_key(2): e2}
        np.testing.assert_allclose(factor.residual(values), np.zeros(6),
                                   atol=1e-9)

    def test_whitening_scales_inverse(self):
        rng = np.random.default_rng(5)
        p, q = random_pose(rng), random_pose(rng)
        base = PriorFactor(obj_key(1), p, UNIT)
        scaled = PriorFactor(obj_key(1), p, NoiseModel.isotropic(4.0, 4.0))
        values = {obj_key(1): q}
        np.testing.assert_allclose(scaled.residual(values),
                                   base.residual(values) / 4.0, atol=1e-12)

    def test_noise_model_validation(self):
        with pytest.raises(ValueError):
            NoiseModel(np.zeros(6))
        with pytest.raises(ValueError):
            NoiseModel(np.ones(5))


class TestLinearize:
    def test_single_prior_block(self):
        rng = np.random.default_rng(6)
        p = random_pose(rng)
        graph = FactorGraph()
        graph.add(vis_prior(1, p, UNIT))
        system = linearize(graph, {obj_key(1): p})
        assert len(system.blocks) == 1
        _, _, block = system.blocks[0]
        np.testing.assert_allclose(block, np.eye(6), atol=1e-6)

    def test_empty_graph(self):
        system = linearize(FactorGraph(), {})
        assert len(system.residual) == 0
        assert len(system.blocks) == 0

    def test_step_halving_consistency(self):
        rng = np.random.default_rng(7)
        o, e = random_pose(rng), random_pose(rng)
        measured = geometry.compose(geometry.inverse(o), e)
        graph = FactorGraph()
        graph.add(Im2PatchFactor(1, measured, UNIT))
        values = {obj_key(1): random_pose(rng), eff_key(1): random_pose(rng)}
        full = linearize(graph, values, eps=1e-5).dense_jacobian()
        half = linearize(graph, values, eps=5e-6).dense_jacobian()
        assert np.abs(full - half).max() < 1e-5

    def test_fixed_variables_excluded(self):
        rng = np.random.default_rng(8)
        o, e = random_pose(rng), random_pose(rng)
        graph = FactorGraph()
        graph.add(Im2PatchFactor(1, Pose.identity(), UNIT))
        system = linearize(graph, {obj_key(1): o, eff_key(1): e},
                           fixed=frozenset({obj_key(1)}))
        assert system.keys == [eff_key(1)]


class TestOptimize:
    def test_single_prior_quadratic_bowl(self):
        rng = np.random.default_rng(9)
        mean = random_pose(rng)
        graph = FactorGraph()
        graph.add(vis_prior(1, mean, UNIT))
        init = {obj_key(1): geometry.oplus(mean, rng.uniform(-0.05, 0.05, 6))}
        values, stats = optimize(graph, init)
        assert np.linalg.norm(geometry.ominus(values[obj_key(1)], mean)) < 1e-8
        assert 1 <= stats.iterations <= 3

    def test_two_prior_gaussian_fusion(self):
        mu1 = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        mu2 = Pose(np.eye(3), np.array([3.0, 0.0, 0.0]))
        s1, s2 = 1.0, 2.0
        graph = FactorGraph()
        graph.add(PriorFactor(obj_key(1), mu1, NoiseModel.isotropic(s1, s1)))
        graph.add(PriorFactor(obj_key(1), mu2, NoiseModel.isotropic(s2, s2)))
        expected = (1.0 / s1**2 + 3.0 / s2**2) / (1.0 / s1**2 + 1.0 / s2**2)
        values, _ = optimize(graph, {obj_key(1): Pose.identity()})
        np.testing.assert_allclose(values[obj_key(1)].translation,
                                   [expected, 0.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(values[obj_key(1)].rotation, np.eye(3),
                                   atol=1e-6)

    def test_exact_odometry_chain_recovery(self):
        rng = np.random.default_rng(10)
        truth = [random_pose(rng, max_angle=0.3, max_trans=2.0)]
        for _ in range(9):
            step = geometry.exp(rng.uniform(-0.2, 0.2, 6))
            truth.append(geometry.compose(truth[-1], step))

        graph = FactorGraph()
        graph.add(eff_prior(1, truth[0], UNIT))
        for t in range(2, 11):
            measured = geometry.compose(geometry.inverse(truth[t - 2]),
                                        truth[t - 1])
            # Odometry between consecutive end-effector poses expressed as a
            # relative-motion measurement with the object held fixed.
            graph.add(Im2ImFactor(t, measured, UNIT))
        anchor = Pose.identity()
        init = {eff_key(t + 1): geometry.oplus(truth[t],
                                               rng.uniform(-0.05, 0.05, 6))
                for t in range(10)}
        init.update({obj_key(t + 1): anchor for t in range(10)})
        fixed = frozenset(obj_key(t + 1) for t in range(10))
        values, _ = optimize(graph, init, fixed=fixed)
        for t in range(10):
            err = geometry.ominus(values[eff_key(t + 1)], truth[t])
            assert np.linalg.norm(err) < 1e-6

    def test_gauge_error_for_unconstrained_variable(self):
        graph = FactorGraph()
        graph.add(vis_prior(1, Pose.identity(), UNIT))
        init = {obj_key(1): Pose.identity(), obj_key(2): Pose.identity()}
        with pytest.raises(GaugeError):
            optimize(graph, init)

    def test_fixed_exempts_gauge_check(self):
        graph = FactorGraph()
        graph.add(vis_prior(1, Pose.identity(), UNIT))
        init = {obj_key(1): Pose.identity(), obj_key(2): Pose.identity()}
        values, _ = optimize(graph, init, fixed=frozenset({obj_key(2)}))
        assert obj_key(2) in values

    def test_cost_monotone_and_final_not_above_initial(self):
        rng = np.random.default_rng(11)
        graph = FactorGraph()
        mean = random_pose(rng)
        graph.add(vis_prior(1, mean, UNIT))
        graph.add(PriorFactor(obj_key(1), random_pose(rng), UNIT))
        init = {obj_key(1): random_pose(rng)}
        _, stats = optimize(graph, init)
        assert stats.final_cost <= stats.initial_cost

    def test_stationary_point(self):
        rng = np.random.default_rng(12)
        graph = FactorGraph()
        graph.add(PriorFactor(obj_key(1), random_pose(rng), UNIT))
        graph.add(PriorFactor(obj_key(1), random_pose(rng), UNIT))
        init = {obj_key(1): Pose.identity()}
        values, stats = optimize(graph, init,
                                 OptimizerParams(max_iterations=100,
                                                 cost_tolerance=1e-14))
        system = linearize(graph, values)
        jac = system.dense_jacobian()
        grad = jac.T @ system.residual
        assert np.abs(grad).max() < 1e-6 * (1.0 + stats.initial_cost)


class TestSerialization:
    def test_graph_dump_json(self):
        graph = FactorGraph()
        graph.add(vis_prior(1, Pose.identity(), UNIT))
        graph.add(ConstVelFactor(3, UNIT))
        payload = json.loads(graph.dump_json({obj_key(1): Pose.identity()}))
        assert [f["type"] for f in payload["factors"]] == ["vis_prior",
                                                           "const_vel"]
        assert payload["values"]["o1"][:4] == [1.0, 0.0, 0.0, 0.0]
