import torch
from typing import Any, Dict, Optional, Tuple
from ..numerics import save_artifact, load_artifact
from ..utils import ArtifactError, LabError
from .config import ModelConfig
from .transformer import TransformerModel


__all__ = ['save_checkpoint', 'load_checkpoint']


def save_checkpoint(
        model: TransformerModel, directory: str, step: int=0,
        accuracy: Optional[Dict[str, float]]=None, verbose: bool=True
):
    """
    Save a model as manifest.json (config, step, per-task accuracy) plus tensor records

    :param model:
    :param directory: checkpoint directory (created if missing)
    """
    manifest = {
        'kind': 'model', 'config': model.config.to_dict(), 'step': step,
        'accuracy': {} if accuracy is None else dict(accuracy)
    }
    save_artifact(directory, manifest, {name: t.detach() for name, t in model.state_dict().items()})
    if verbose: print("Model saved")


def load_checkpoint(directory: str, verbose: bool=False) -> Tuple[TransformerModel, Dict[str, Any]]:
    """
    Load the model stored at directory

    :return: the model (in eval mode) and its manifest
    """
    manifest, tensors = load_artifact(directory)
    if manifest.get('kind') != 'model':
        raise ArtifactError("not a model checkpoint", directory)
    try:
        model = TransformerModel(ModelConfig.from_dict(manifest['config']))
        model.load_state_dict(tensors, strict=True)
    except (KeyError, RuntimeError, LabError) as e:
        raise ArtifactError("checkpoint does not match its config: " + str(e), directory)
    model.eval()
    if verbose: print("Model loaded")
    return model, manifest
