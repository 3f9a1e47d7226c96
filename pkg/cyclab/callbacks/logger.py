from torch.utils.tensorboard import SummaryWriter
from typing import Dict, Any, Optional
from .callbacks import Callback


__all__ = ['Tensorboard', 'LossLogger', 'TaskLossLogger']


class Tensorboard(Callback):
    """Stream the mixture loss, each task's batch loss and every evaluation metric to TensorBoard"""
    def __init__(self, log_dir: Optional[str]=None, every_iter: int=1):
        self._writer = SummaryWriter(log_dir=log_dir)
        self._every_iter = every_iter

    def on_batch_end(self, logs: Dict[str, Any]):
        step = logs["iter_cnt"]
        if step % self._every_iter != 0: return
        self._writer.add_scalar("train/loss", logs["loss"].item(), global_step=step)
        for task, loss in logs.get("task_losses", {}).items():
            self._writer.add_scalar("train/" + task + "_loss", loss, global_step=step)

    def on_epoch_end(self, logs: Dict[str, Any]) -> bool:
        for metric, value in logs.get("epoch_metrics", {}).items():
            # tasks with no in-cycle prompts report None
            if value is None: continue
            self._writer.add_scalar("eval/" + metric, value, global_step=logs["epoch"])
        self._writer.add_scalar("eval/loss", logs["loss"], global_step=logs["epoch"])
        return False

    def on_train_end(self): self._writer.close()


class LossLogger(Callback):
    def __init__(self, print_every: int=1000):
        self._print_every = print_every

    def on_batch_end(self, logs: Dict[str, Any]):
        if logs["iter_cnt"] % self._print_every == 0:
            print("Iteration " + str(logs["iter_cnt"]) + ": " + str(logs["loss"].item()))


class TaskLossLogger(Callback):
    """Print each task's share of the latest batch loss every print_every iterations"""
    def __init__(self, print_every: int=1000):
        self._print_every = print_every

    def on_batch_end(self, logs: Dict[str, Any]):
        if logs["iter_cnt"] % self._print_every != 0 or "task_losses" not in logs: return
        print("  " + ", ".join(task + ": {:.4f}".format(loss) for task, loss in logs["task_losses"].items()))
