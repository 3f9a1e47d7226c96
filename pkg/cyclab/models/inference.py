"""Batched answer-position readouts"""
import torch
from torch import Tensor
from collections import OrderedDict
from typing import Callable, Dict, List, Optional, Sequence
from ..hooks import HookSpec, run_with_hooks
from ..tasks import PromptInstance, prompt_batch


__all__ = ['group_by_length', 'final_logits', 'predict', 'model_accuracy', 'model_correct_predicate']


def group_by_length(prompts: Sequence[PromptInstance]) -> 'OrderedDict[int, List[int]]':
    """Indices of prompts grouped by token length, so each group forms one batch shape"""
    groups = OrderedDict()
    for i, prompt in enumerate(prompts):
        groups.setdefault(len(prompt.token_ids), []).append(i)
    return groups


@torch.no_grad()
def final_logits(
        model, prompts: Sequence[PromptInstance], batch_size: int=256,
        hooks_fn: Optional[Callable[[Sequence[PromptInstance]], Sequence[HookSpec]]]=None
) -> Tensor:
    """
    Logits at the final position of every prompt, in input order

    :param hooks_fn: maps a batch of prompts to the interventions for that batch
    :return: (n_prompts, vocab)
    """
    out = [None] * len(prompts)
    for indices in group_by_length(prompts).values():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            batch = [prompts[i] for i in chunk]
            hooks = [] if hooks_fn is None else hooks_fn(batch)
            logits, _ = run_with_hooks(model, prompt_batch(batch), hooks, cache_points=())
            for i, row in zip(chunk, logits[:, -1, :]):
                out[i] = row
    return torch.stack(out) if out else torch.zeros(0, 0)


def predict(model, prompts: Sequence[PromptInstance], batch_size: int=256, hooks_fn=None) -> List[int]:
    return final_logits(model, prompts, batch_size, hooks_fn).argmax(dim=-1).tolist()


def model_accuracy(model, prompts: Sequence[PromptInstance], batch_size: int=256, hooks_fn=None) -> float:
    predictions = predict(model, prompts, batch_size, hooks_fn)
    return sum(pred == p.gold_id for pred, p in zip(predictions, prompts)) / max(len(prompts), 1)


def model_correct_predicate(model, prompts: Sequence[PromptInstance]) -> Callable[[PromptInstance], bool]:
    """Predicate accepting exactly the prompts (among `prompts`) the model answers correctly"""
    predictions = predict(model, prompts)
    correct = {p for pred, p in zip(predictions, prompts) if pred == p.gold_id}
    return lambda prompt: prompt in correct
