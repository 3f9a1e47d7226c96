import torch
from torch import nn, Tensor
from typing import NamedTuple
from ..hooks import HookedModule
from ..components import DecoderBlock, RMSNorm
from ..utils import DimensionError, HookError
from .config import ModelConfig


__all__ = ['TransformerModel', 'MLPWeights', 'mlp_weights']


INIT_STD = 0.02


class MLPWeights(NamedTuple):
    """Per-neuron rows, each (d_mlp, d_model): gate g_i, up u_i, down d_i"""
    gate: Tensor
    up: Tensor
    down: Tensor


class TransformerModel(HookedModule):
    """
    Decoder-only transformer: token embedding, pre-norm blocks with rotary attention and gated SiLU MLP,
    final RMS norm and an untied unembedding.
    """
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.embed = nn.Embedding(config.vocab_size, config.d_model)
        self.blocks = nn.ModuleList([
            DecoderBlock(
                layer, config.d_model, config.n_heads, config.d_mlp, config.max_seq_len, config.rms_norm_epsilon
            )
            for layer in range(config.n_layers)
        ])
        self.final_norm = RMSNorm(config.d_model, config.rms_norm_epsilon)
        self.unembed = nn.Linear(config.d_model, config.vocab_size, bias=False)
        self.reset_parameters()

    @torch.no_grad()
    def reset_parameters(self):
        """Normal(0, 0.02) for every matrix, ones for norm weights; drawn from a generator seeded by config.seed"""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.config.seed)
            for name, parameter in self.named_parameters():
                if parameter.dim() >= 2:
                    nn.init.normal_(parameter, 0.0, INIT_STD)
                else:
                    nn.init.ones_(parameter)

    def forward(self, tokens: Tensor) -> Tensor:
        """
        :param tokens: (batch, seq) token ids
        :return: logits (batch, seq, vocab)
        """
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[1] > self.config.max_seq_len:
            raise DimensionError("sequence of length " + str(tokens.shape[1]) + " exceeds max_seq_len")
        if tokens.numel() > 0 and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise DimensionError("token id out of vocabulary range")
        resid = self.embed(tokens)
        for block in self.blocks:
            resid = block(resid)
        return self.unembed(self.final_norm(resid))

    def mlp_weights(self, layer: int) -> MLPWeights:
        if not 0 <= layer < self.config.n_layers:
            raise HookError("layer " + str(layer) + " out of range")
        mlp = self.blocks[layer].mlp
        return MLPWeights(mlp.W_gate.detach().clone(), mlp.W_up.detach().clone(), mlp.W_down.detach().clone())


def mlp_weights(model: TransformerModel, layer: int) -> MLPWeights:
    return model.mlp_weights(layer)
