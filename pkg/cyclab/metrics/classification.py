import numpy as np
import torch
from sklearn.metrics import accuracy_score
from typing import Dict, Any, Optional, Sequence
from .metrics import Metric


__all__ = ['Accuracy', 'TaskAccuracy', 'MeanInCycleAccuracy']


def _predictions(logs: Dict[str, Any]) -> np.ndarray:
    outputs = logs["outputs"]
    if isinstance(outputs, torch.Tensor):
        if outputs.dim() > 1:
            outputs = torch.argmax(outputs, dim=-1)
        return outputs.cpu().detach().numpy()
    return np.asarray(outputs)


def _labels(logs: Dict[str, Any]) -> np.ndarray:
    labels = logs["labels"]
    if isinstance(labels, torch.Tensor):
        return labels.cpu().numpy()
    return np.asarray(labels)


class Accuracy(Metric):
    """Answer-token accuracy over every evaluated prompt"""
    def __init__(self):
        self._best = 0.0

    def __call__(self, logs: Dict[str, Any]) -> float:
        acc = accuracy_score(y_true=_labels(logs).ravel(), y_pred=_predictions(logs).ravel())

        if acc >= self._best:
            self._best = acc

        return acc


class TaskAccuracy(Metric):
    """
    Accuracy restricted to one task, optionally to its in-cycle prompts.
    Expects logs["tasks"] (task name per prompt) and logs["in_cycle"] (bool per prompt).
    """
    def __init__(self, task: str, in_cycle_only: bool=False):
        self._task = task
        self._in_cycle_only = in_cycle_only
        self._best = 0.0

    def __call__(self, logs: Dict[str, Any]) -> Optional[float]:
        mask = np.asarray(logs["tasks"]) == self._task
        if self._in_cycle_only:
            mask = mask & np.asarray(logs["in_cycle"], dtype=bool)
        if not mask.any():
            return None

        acc = accuracy_score(y_true=_labels(logs)[mask], y_pred=_predictions(logs)[mask])
        if acc >= self._best:
            self._best = acc
        return acc


class MeanInCycleAccuracy(Metric):
    """Unweighted mean over tasks of the in-cycle accuracy; the checkpoint monitor"""
    def __init__(self, tasks: Sequence[str]):
        self._per_task = [TaskAccuracy(task, in_cycle_only=True) for task in tasks]
        self._best = 0.0

    def __call__(self, logs: Dict[str, Any]) -> float:
        accs = [acc for acc in (metric(logs) for metric in self._per_task) if acc is not None]
        mean = float(np.mean(accs)) if accs else 0.0
        if mean >= self._best:
            self._best = mean
        return mean
