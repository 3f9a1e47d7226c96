from cyclab.callbacks import Callback, EarlyStoppingCB, MetricMonitor
from cyclab.learner import train
from cyclab.models import TrainSchedule, load_checkpoint, model_accuracy
from cyclab.tasks import get_task_spec, generate_dataset
from cyclab.test import tiny_model
from cyclab.utils import TrainingError
from collections import OrderedDict
import os
import pytest


def _datasets():
    return OrderedDict([
        ('weekdays', generate_dataset(get_task_spec('weekdays', max_offset=7))),
        ('addition', generate_dataset(get_task_spec('addition', a_range=(1, 6), b_range=(1, 6)))),
    ])


class PoisonLoss(Callback):
    def after_losses(self, losses, train):
        losses['loss'] = losses['loss'] * float('nan')
        return losses


class TestTrain:
    @pytest.mark.slow
    def test_learns_small_mixture(self, tmp_path):
        datasets = _datasets()
        schedule = TrainSchedule(n_epoch=150, batch_size=16, lr=1e-2, seed=0)
        directory = str(tmp_path / 'checkpoint')
        log = train(tiny_model(), datasets, schedule, checkpoint_dir=directory, verbose=False)

        assert len(log.history) == 150
        assert {'epoch', 'loss', 'in_cycle_accuracy', 'weekdays_accuracy'} <= set(log.history[-1])
        assert log.checkpoint == os.path.abspath(directory)
        assert log.best_in_cycle_accuracy > 0.8

        best, manifest = load_checkpoint(directory)
        assert manifest['accuracy']['in_cycle_accuracy'] == pytest.approx(log.best_in_cycle_accuracy)
        assert model_accuracy(best, datasets['weekdays']) == pytest.approx(manifest['accuracy']['weekdays_accuracy'])

    def test_deterministic(self):
        schedule = TrainSchedule(n_epoch=2, batch_size=16, seed=5)
        a, b = tiny_model(), tiny_model()
        log_a = train(a, _datasets(), schedule, verbose=False)
        log_b = train(b, _datasets(), schedule, verbose=False)
        assert log_a.history == log_b.history
        for p, q in zip(a.parameters(), b.parameters()):
            assert bool((p == q).all())

    def test_divergence_raises(self, tmp_path):
        schedule = TrainSchedule(n_epoch=3, batch_size=16)
        with pytest.raises(TrainingError) as info:
            train(tiny_model(), _datasets(), schedule, checkpoint_dir=str(tmp_path / 'ckpt'),
                  callbacks=[PoisonLoss()], verbose=False)
        assert info.value.exit_code == 4

    def test_in_cycle_only(self):
        schedule = TrainSchedule(n_epoch=1, batch_size=16, in_cycle_only=True)
        log = train(tiny_model(), _datasets(), schedule, verbose=False)
        assert len(log.history) == 1


class TestEarlyStopping:
    def test_stops_after_patience(self):
        callback = EarlyStoppingCB(monitor='in_cycle_accuracy', patience=1, mode='max')
        scores = [0.5, 0.7, 0.6, 0.6]
        stops = [callback.on_epoch_end({'epoch_metrics': {'in_cycle_accuracy': s}}) for s in scores]
        assert stops == [False, False, False, True]

    def test_monitor_min_delta(self):
        monitor = MetricMonitor('loss', mode='min', min_delta=0.1)
        improved = [monitor.update({'epoch_metrics': {'loss': v}}) for v in [1.0, 0.95, 0.8, 0.8]]
        assert improved == [True, False, True, False]
        assert monitor.best == 0.8
