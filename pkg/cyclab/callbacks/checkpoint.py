import os
from typing import Dict, Any
from ..models import save_checkpoint
from .callbacks import Callback, MetricMonitor


__all__ = ['ModelCheckpoint']


class ModelCheckpoint(Callback):
    """
    Save the model with its epoch accuracies whenever the monitored metric reaches a new best
    (or at every evaluation if save_best_only is False). The learner's `last_checkpoint` points at the latest save.
    """
    def __init__(
            self, filepath: str, monitor: str='in_cycle_accuracy',
            save_best_only: bool=True, mode: str='max', verbose: bool=True
    ):
        self._filepath = filepath
        self._monitor = MetricMonitor(monitor, mode)
        self._save_best_only = save_best_only
        self._verbose = verbose

    def _save(self, logs: Dict[str, Any]):
        accuracy = {k: v for k, v in logs.get('epoch_metrics', {}).items() if v is not None}
        save_checkpoint(
            self.learner._model, self._filepath, step=logs.get('iter_cnt', 0), accuracy=accuracy, verbose=self._verbose
        )
        self.learner.last_checkpoint = os.path.abspath(self._filepath)

    def on_epoch_end(self, logs: Dict[str, Any]) -> bool:
        improved = self._monitor.update(logs)
        if improved or not self._save_best_only:
            self._save(logs)
        return False
