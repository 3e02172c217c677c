import asyncio

import numpy as np
import pytest

from gaussians.cloud import ATTRIBUTES
from models.training_state import TrainConfig
from tools.dataset import load_dataset
from training.trainer import Trainer, TrainingData, initialize_cloud, train
from utils.errors import DatasetError


@pytest.fixture(scope="module")
def training_data(tiny_dataset) -> TrainingData:
    out, _ = tiny_dataset
    return asyncio.run(load_dataset(out)).training_data()


def small_config(**overrides) -> TrainConfig:
    values = dict(
        iterations=40,
        init_count=40,
        use_deformation=False,
        use_ac_color=False,
        densify_from=10,
        densify_interval=10,
        densify_until=20,
        prune_every=10,
        checkpoint_every=20,
        seed=3,
    )
    values.update(overrides)
    return TrainConfig(**values)


class TestTrainingData:
    def test_extent_and_times(self, training_data):
        assert training_data.extent == pytest.approx(np.sqrt(3.0))
        assert training_data.times == [0.0, 0.5, 1.0]

    def test_rejects_empty(self, training_data):
        with pytest.raises(DatasetError):
            TrainingData(views=[], scene_min=training_data.scene_min, scene_max=training_data.scene_max).validate()

    def test_rejects_wrong_image_size(self, training_data):
        view = training_data.views[0]
        bad = type(view)(camera=view.camera, image=view.image[:8])
        with pytest.raises(DatasetError):
            Trainer(TrainingData([bad], training_data.scene_min, training_data.scene_max), small_config())


class TestInitializeCloud:
    def test_inside_box_with_identity_rotations(self, rng):
        cfg = TrainConfig(init_opacity=0.1)
        cloud = initialize_cloud(50, -np.ones(3), np.ones(3), cfg, rng)
        assert cloud.count == 50
        assert np.all(np.abs(cloud.mu4[:, :3]) <= 1.0)
        assert np.all((cloud.mu4[:, 3] >= 0.0) & (cloud.mu4[:, 3] <= 1.0))
        np.testing.assert_array_equal(cloud.q_l, np.tile([1.0, 0.0, 0.0, 0.0], (50, 1)))
        np.testing.assert_allclose(cloud.opacity, 0.1)
        np.testing.assert_allclose(cloud.s4[:, 3], np.log(cfg.init_time_scale))


class TestTrainer:
    def test_zero_iterations_leave_model(self, training_data):
        trainer = Trainer(training_data, small_config(iterations=0))
        before = trainer.model.copy()
        result = trainer.train()
        assert result.log.records == []
        for name in ATTRIBUTES:
            np.testing.assert_array_equal(getattr(result.model.cloud, name), getattr(before.cloud, name))

    def test_loss_decreases_on_a_single_view(self, training_data):
        single = TrainingData(training_data.views[:1], training_data.scene_min, training_data.scene_max)
        result = train(single, small_config(iterations=80, densify_until=0))
        l1 = result.log.losses("l1")
        assert np.mean(l1[-10:]) < np.mean(l1[:5])

    def test_counts_and_events(self, training_data):
        cfg = small_config()
        result = train(training_data, cfg)
        log = result.log
        assert len(log.records) == cfg.iterations
        assert log.variant == "DC+Lopa"
        counts = [count for iteration, count in log.counts() if iteration < cfg.densify_until]
        assert counts == sorted(counts)
        later = [count for iteration, count in log.counts() if iteration >= cfg.densify_until]
        assert later == sorted(later, reverse=True)
        assert all(event.iteration < cfg.densify_until for event in log.densify_events)
        assert all(event.iteration >= cfg.densify_until for event in log.prune_events)
        assert all(event.after <= event.before for event in log.prune_events)
        assert [sample.iteration for sample in log.participation] == [19, 39]

    def test_deterministic_for_a_seed(self, training_data):
        cfg = small_config(iterations=15, use_deformation=True, use_ac_color=True, deform_hidden=8, color_hidden=8)
        first = train(training_data, cfg).model
        second = train(training_data, cfg).model
        for name in ATTRIBUTES:
            np.testing.assert_array_equal(getattr(first.cloud, name), getattr(second.cloud, name))
        for a, b in zip(first.deformation.parameters(), second.deformation.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_progress_callback(self, training_data):
        seen = []
        Trainer(training_data, small_config(iterations=5)).train(progress=seen.append)
        assert [record.iteration for record in seen] == [0, 1, 2, 3, 4]
