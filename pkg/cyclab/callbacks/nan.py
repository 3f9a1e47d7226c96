from .callbacks import Callback
from typing import Dict, Any
from torch import Tensor
from ..utils import is_valid, TrainingError


__all__ = ['TerminateOnNaN']


class TerminateOnNaN(Callback):
    """
    Terminate training when the loss stops being finite. The last good checkpoint (if any) stays on disk.
    """
    def on_batch_end(self, logs: Dict[str, Any]):
        for key in logs:
            if isinstance(logs[key], Tensor) and not is_valid(logs[key]):
                raise TrainingError(
                    key + " becomes NaN at iteration " + str(logs["iter_cnt"]),
                    checkpoint=getattr(self.learner, 'last_checkpoint', None)
                )
