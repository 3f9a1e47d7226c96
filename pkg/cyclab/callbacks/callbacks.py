from typing import Dict, Any, List, Optional
from torch import Tensor
from ..metrics import Metric


__all__ = ['Callback', 'CallbackHandler', 'MetricMonitor', 'EarlyStoppingCB']


class Callback:
    """
    Training event hooks. The handler sets `learner` and `n_epoch` before training starts.
    Event order per step: on_batch_begin, after_outputs (per stream), after_losses, on_batch_end.
    """
    order: int=0

    def on_train_begin(self): pass

    def on_epoch_begin(self): pass

    def on_batch_begin(self, data: Dict[str, Any], train: bool) -> Dict[str, Any]: return data

    def after_outputs(self, outputs: Dict[str, Tensor], train: bool) -> Dict[str, Tensor]: return outputs

    def after_losses(self, losses: Dict[str, Tensor], train: bool) -> Dict[str, Tensor]: return losses

    def on_epoch_end(self, logs: Dict[str, Any]) -> bool: return False # whether to stop training

    def on_batch_end(self, logs: Dict[str, Any]): pass

    def on_train_end(self): pass


class CallbackHandler:
    """
    Dispatch learner events to callbacks (sorted by order) and evaluate the metrics at every evaluation.
    Each evaluation appends one record (epoch, iteration, validation loss, metrics) to `history`.
    """
    def __init__(
            self, learner, n_epoch: int, callbacks: Optional[List[Callback]]=None,
            metrics: Optional[Dict[str, Metric]]=None, final_metric: str='in_cycle_accuracy', verbose: bool=True
    ):
        if metrics is not None:
            assert final_metric in metrics, "unknown final metric " + final_metric

        self._callbacks = sorted(callbacks or [], key=lambda cb: cb.order)
        for callback in self._callbacks:
            callback.learner, callback.n_epoch = learner, n_epoch
        self._metrics, self._final_metric = metrics, final_metric
        self._iter_cnt, self._epoch = 0, 0
        self._verbose = verbose
        self.history: List[Dict[str, Any]] = []
        self.learner = learner

    def _dispatch(self, event: str, *args):
        for callback in self._callbacks:
            getattr(callback, event)(*args)

    def _thread(self, event: str, value, train: bool):
        """Pass `value` through every callback's `event` in order"""
        for callback in self._callbacks:
            value = getattr(callback, event)(value, train)
        return value

    def on_train_begin(self): self._dispatch('on_train_begin')

    def on_epoch_begin(self): self._dispatch('on_epoch_begin')

    def on_batch_begin(self, data: Dict[str, Any], train: bool) -> Dict[str, Any]:
        return self._thread('on_batch_begin', data, train)

    def after_outputs(self, outputs: Dict[str, Tensor], train: bool) -> Dict[str, Tensor]:
        return self._thread('after_outputs', outputs, train)

    def after_losses(self, losses: Dict[str, Tensor], train: bool) -> Dict[str, Tensor]:
        return self._thread('after_losses', losses, train)

    def on_batch_end(self, logs: Dict[str, Any]):
        logs["iter_cnt"] = self._iter_cnt
        self._dispatch('on_batch_end', logs)
        self._iter_cnt += 1

    def on_epoch_end(self, logs: Dict[str, Any]) -> bool:
        logs["epoch"] = self._epoch
        record = {"epoch": self._epoch, "iter_cnt": self._iter_cnt, "loss": float(logs.get("loss", float('nan')))}
        if self._metrics is not None:
            logs["epoch_metrics"] = {name: metric(logs) for name, metric in self._metrics.items()}
            record.update(logs["epoch_metrics"])
            if self._verbose:
                print("Evaluate for epoch " + str(self._epoch) + ": ")
                for name, value in logs["epoch_metrics"].items():
                    print(name + ": " + str(value))
        self.history.append(record)

        stop_training = False
        for callback in self._callbacks:
            stop_training = callback.on_epoch_end(logs) or stop_training
        self._epoch += 1
        return stop_training

    def on_train_end(self) -> float:
        self._dispatch('on_train_end')
        return 0.0 if self._metrics is None else self._metrics[self._final_metric].get_best()


class MetricMonitor:
    """
    Track one epoch metric. `update` returns whether the value is a new best: it must beat every earlier value
    by min_delta (or tie the best when min_delta is 0) and clear the baseline if one is set.
    """
    def __init__(self, monitor: str, mode: str='max', min_delta: float=0.0, baseline: Optional[float]=None):
        assert mode in ('min', 'max'), "mode must be 'min' or 'max'"
        self.monitor, self.mode = monitor, mode
        self._min_delta, self._baseline = min_delta, baseline
        self.best: Optional[float] = None

    def _better(self, value: float, reference: float) -> bool:
        sign = 1.0 if self.mode == 'max' else -1.0
        if self._min_delta == 0:
            return sign * (value - reference) >= 0
        return sign * (value - reference) > self._min_delta

    def update(self, logs: Dict[str, Any]) -> bool:
        epoch_metrics = logs['epoch_metrics']
        assert self.monitor in epoch_metrics, "metric " + self.monitor + " is not computed"
        value = epoch_metrics[self.monitor]
        improved = self.best is None or self._better(value, self.best)
        if improved:
            self.best = value
        return improved and (self._baseline is None or self._better(value, self._baseline))


class EarlyStoppingCB(Callback):
    """Stop once the monitored metric has gone more than `patience` evaluations without a new best"""
    def __init__(self, monitor='in_cycle_accuracy', min_delta: float=0, patience: int=0, mode: str='max',
                 baseline: float=None):
        self._monitor = MetricMonitor(monitor, mode, min_delta, baseline)
        self._patience = patience
        self._cur_p = 0

    def on_epoch_end(self, logs: Dict[str, Any]) -> bool:
        self._cur_p = 0 if self._monitor.update(logs) else self._cur_p + 1
        return self._cur_p > self._patience
