import torch
import torch.nn.functional as F
from torch import Tensor
from torch.optim import Adam, Optimizer
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence
from .callbacks import (
    Callback, CallbackHandler, EarlyStoppingCB, ModelCheckpoint, TerminateOnNaN, LossLogger, TaskLossLogger, Tensorboard
)
from .metrics import Metric, Accuracy, TaskAccuracy, MeanInCycleAccuracy
from .models import TransformerModel, TrainSchedule, final_logits, group_by_length
from .tasks import PromptInstance, prompt_batch, is_in_cycle
from .utils import compute_num_batch, set_seed


__all__ = ['TaskMixtureLearner', 'TrainingLog', 'train', 'default_metrics']


class TaskMixtureLearner:
    """
    Train on several tasks at once. Every step draws one batch per (task, prompt length) stream and minimizes
    the sum over streams of the answer-position cross-entropy.
    """
    def __init__(
            self, train_data: Dict[str, Sequence[PromptInstance]], model: TransformerModel,
            optimizer: Optimizer, val_data: Optional[Dict[str, Sequence[PromptInstance]]]=None,
            batch_size: int=64, seed: int=0
    ):
        self._streams = OrderedDict()
        for task, prompts in train_data.items():
            prompts = list(prompts)
            for length, indices in group_by_length(prompts).items():
                self._streams[(task, length)] = [prompts[i] for i in indices]
        assert len(self._streams) > 0, "no training data"
        self._val_data = train_data if val_data is None else val_data
        self._model, self._optimizer = model, optimizer
        self._batch_size, self._seed = batch_size, seed
        self.last_checkpoint: Optional[str] = None

    def learn(
            self, n_epoch: int, callbacks: Iterable[Callback]=None, metrics: Dict[str, Metric]=None,
            final_metric: str='in_cycle_accuracy', eval_every: int=1, verbose: bool=True
    ) -> float:
        self._cb_handler = CallbackHandler(self, n_epoch, list(callbacks or []), metrics, final_metric, verbose)
        self._cb_handler.on_train_begin()

        n_steps = max(compute_num_batch(len(prompts), self._batch_size) for prompts in self._streams.values())
        for e in range(n_epoch):
            if verbose: print("Epoch " + str(e))
            self._model.train()
            self._cb_handler.on_epoch_begin()

            generator = torch.Generator().manual_seed(self._seed * 100003 + e)
            orders = {key: torch.randperm(len(prompts), generator=generator).tolist() for key, prompts in self._streams.items()}
            for step in range(n_steps):
                self.learn_one_iter(self._step_batches(orders, step))

            if (e + 1) % eval_every == 0 or e == n_epoch - 1:
                stop_training = self.evaluate()
                if stop_training:
                    if verbose: print("Patience exceeded. Training finished.")
                    break

        self._model.eval()
        return self._cb_handler.on_train_end()

    def _step_batches(self, orders: Dict, step: int) -> Dict[str, List[PromptInstance]]:
        """Batch `step` of every stream; smaller streams wrap around"""
        batches = OrderedDict()
        for key, prompts in self._streams.items():
            n_batch = compute_num_batch(len(prompts), self._batch_size)
            start = (step % n_batch) * self._batch_size
            batches[key] = [prompts[i] for i in orders[key][start:start + self._batch_size]]
        return batches

    def learn_one_iter(self, batches: Dict):
        data = self._cb_handler.on_batch_begin({'batches': batches}, True)
        self._optimizer.zero_grad()
        losses = OrderedDict()
        for (task, _), prompts in data['batches'].items():
            loss = self.compute_loss(prompts, True)
            losses[task] = losses[task] + loss if task in losses else loss
        loss = self._cb_handler.after_losses({"loss": sum(losses.values())}, True)["loss"]
        loss.backward()
        self._optimizer.step()
        self._cb_handler.on_batch_end({
            "loss": loss.detach(), "task_losses": {task: l.item() for task, l in losses.items()}
        })

    def compute_loss(self, prompts: Sequence[PromptInstance], train: bool) -> Tensor:
        logits = self._cb_handler.after_outputs({"output": self._model(prompt_batch(prompts))}, train)["output"]
        labels = torch.tensor([p.gold_id for p in prompts], dtype=torch.long)
        return F.cross_entropy(logits[:, -1, :], labels)

    @torch.no_grad()
    def evaluate(self) -> bool:
        self._model.eval()
        prompts = [p for task_prompts in self._val_data.values() for p in task_prompts]
        logits = final_logits(self._model, prompts)
        labels = torch.tensor([p.gold_id for p in prompts], dtype=torch.long)

        logs = dict()
        logs["loss"] = F.cross_entropy(logits, labels).item()
        logs["outputs"] = logits.argmax(dim=-1)
        logs["labels"] = labels
        logs["tasks"] = [p.task for p in prompts]
        logs["in_cycle"] = [is_in_cycle(p) for p in prompts]
        return self._cb_handler.on_epoch_end(logs)

    @property
    def history(self) -> List[Dict[str, Any]]: return self._cb_handler.history


def default_metrics(tasks: Sequence[str]) -> Dict[str, Metric]:
    metrics = OrderedDict()
    metrics['accuracy'] = Accuracy()
    metrics['in_cycle_accuracy'] = MeanInCycleAccuracy(tasks)
    for task in tasks:
        metrics[task + '_accuracy'] = TaskAccuracy(task)
        metrics[task + '_in_cycle_accuracy'] = TaskAccuracy(task, in_cycle_only=True)
    return metrics


@dataclass
class TrainingLog:
    history: List[Dict[str, Any]] = field(default_factory=list)
    best_in_cycle_accuracy: float = 0.0
    checkpoint: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'history': self.history, 'best_in_cycle_accuracy': self.best_in_cycle_accuracy,
            'checkpoint': self.checkpoint
        }


def train(
        model: TransformerModel, datasets: Dict[str, Sequence[PromptInstance]], schedule: TrainSchedule,
        checkpoint_dir: Optional[str]=None, callbacks: Optional[List[Callback]]=None,
        tensorboard_dir: Optional[str]=None, verbose: bool=True
) -> TrainingLog:
    """
    Train on the task mixture with Adam, answer-position loss only; the best model (mean in-cycle accuracy)
    is checkpointed to checkpoint_dir. Non-finite loss raises TrainingError.

    :param datasets: task name -> prompts
    :return: per-evaluation log
    """
    schedule.validate()
    set_seed(schedule.seed)
    train_data = datasets
    if schedule.in_cycle_only:
        train_data = OrderedDict((task, [p for p in prompts if is_in_cycle(p)]) for task, prompts in datasets.items())
    optimizer = Adam(model.parameters(), lr=schedule.lr, weight_decay=schedule.weight_decay)
    learner = TaskMixtureLearner(train_data, model, optimizer, val_data=datasets,
                                 batch_size=schedule.batch_size, seed=schedule.seed)

    callbacks = list(callbacks or [])
    callbacks.append(TerminateOnNaN())
    if verbose:
        callbacks.append(LossLogger(print_every=schedule.print_every))
        callbacks.append(TaskLossLogger(print_every=schedule.print_every))
    if checkpoint_dir is not None:
        callbacks.append(ModelCheckpoint(checkpoint_dir, monitor='in_cycle_accuracy', mode='max', verbose=verbose))
    if schedule.patience is not None:
        callbacks.append(EarlyStoppingCB(monitor='in_cycle_accuracy', patience=schedule.patience, mode='max'))
    if tensorboard_dir is not None:
        callbacks.append(Tensorboard(tensorboard_dir))

    best = learner.learn(
        schedule.n_epoch, callbacks, default_metrics(list(datasets.keys())),
        final_metric='in_cycle_accuracy', eval_every=schedule.eval_every, verbose=verbose
    )
    return TrainingLog(learner.history, float(best), learner.last_checkpoint)
