import numpy as np
import pytest

from gaussians.cloud import ATTRIBUTES
from gaussians.model import SplatModel
from training.optimizer import AdamState, ModelOptimizer, adam_step
from utils.errors import DimensionMismatchError


class TestAdamStep:
    def test_zero_gradient_leaves_parameters(self):
        param = np.array([1.0, -2.0])
        state = AdamState.zeros_like(param)
        np.testing.assert_array_equal(adam_step(param, np.zeros(2), state, lr=0.1), param)
        assert state.step == 1

    def test_first_step_moves_by_learning_rate(self):
        state = AdamState.zeros_like(np.ones(2))
        updated = adam_step(np.ones(2), np.array([0.5, -3.0]), state, lr=0.1)
        np.testing.assert_allclose(updated, [0.9, 1.1], atol=1e-12)

    def test_per_column_learning_rate(self):
        state = AdamState.zeros_like(np.ones((2, 2)))
        updated = adam_step(np.ones((2, 2)), np.ones((2, 2)), state, lr=np.array([0.1, 0.01]))
        np.testing.assert_allclose(updated, [[0.9, 0.99], [0.9, 0.99]], atol=1e-12)

    def test_converges_on_quadratic(self, rng):
        target = rng.normal(size=5)
        param = np.zeros(5)
        state = AdamState.zeros_like(param)
        for _ in range(2000):
            param = adam_step(param, 2.0 * (param - target), state, lr=0.01)
        np.testing.assert_allclose(param, target, atol=1e-2)

    def test_weight_decay_pulls_towards_zero(self):
        state = AdamState.zeros_like(np.ones(1))
        assert adam_step(np.ones(1), np.zeros(1), state, lr=0.1, weight_decay=0.5)[0] < 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            adam_step(np.ones(2), np.ones(3), AdamState.zeros_like(np.ones(2)), lr=0.1)


class TestModelOptimizer:
    def test_states_cover_model(self, cloud, rng):
        model = SplatModel.fresh(cloud, rng)
        optimizer = ModelOptimizer(model)
        assert set(optimizer.cloud_states) == set(ATTRIBUTES)
        assert len(optimizer.theta_states) == len(model.deformation.parameters())
        assert len(optimizer.phi_states) == len(model.color.parameters())

    def test_no_predictor_states_without_predictors(self, model):
        optimizer = ModelOptimizer(model)
        assert optimizer.theta_states == [] and optimizer.phi_states == []

    def test_network_step_updates_in_place(self, cloud, rng):
        model = SplatModel.fresh(cloud, rng, use_deformation=False)
        weight = model.color.parameters()[0]
        before = weight.copy()
        ModelOptimizer(model).step_phi(model, [np.ones_like(p) for p in model.color.parameters()], lr=0.01)
        assert model.color.parameters()[0] is weight
        np.testing.assert_allclose(weight, before - 0.01, atol=1e-12)

    def test_remap_follows_rows(self, model):
        optimizer = ModelOptimizer(model)
        grads = {name: np.ones_like(getattr(model.cloud, name)) for name in ATTRIBUTES}
        grads["o_logit"] = np.arange(model.count, dtype=np.float64) + 1.0
        optimizer.step_cloud(model.cloud, grads, {name: 0.01 for name in ATTRIBUTES})
        optimizer.remap(np.array([4, 1]), added=2)
        state = optimizer.moments("o_logit")
        np.testing.assert_allclose(state.exp_avg, [0.5, 0.2, 0.0, 0.0])
        assert optimizer.moments("mu4").exp_avg.shape == (4, 4)
        assert state.step == 1
