"""Llama-style decoder components carrying hook points"""
import torch
from torch import nn, Tensor
import torch.nn.functional as F
from ..hooks import (
    HookPoint, RESID_POST_ATTN, MLP_IN, MLP_GATE_ACT, MLP_UP_ACT, MLP_COMBINED_ACT, MLP_OUT, RESID_POST_MLP, RESID_PRE
)


__all__ = ['RMSNorm', 'RotaryEmbedding', 'CausalSelfAttention', 'GatedMLP', 'DecoderBlock']


class RMSNorm(nn.Module):
    """
    y = x / sqrt(mean(x^2) + eps) * weight

    References:

        Biao Zhang and Rico Sennrich. "Root Mean Square Layer Normalization."
        https://arxiv.org/abs/1910.07467
    """
    def __init__(self, d_model: int, eps: float=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(d_model))

    def forward(self, input: Tensor) -> Tensor:
        return input * torch.rsqrt(input.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


class RotaryEmbedding(nn.Module):
    """
    Rotate consecutive feature pairs of queries and keys by position-dependent angles

    References:

        Jianlin Su et al. "RoFormer: Enhanced Transformer with Rotary Position Embedding."
        https://arxiv.org/abs/2104.09864
    """
    def __init__(self, head_dim: int, max_seq_len: int, base: float=10000.0):
        super().__init__()
        assert head_dim % 2 == 0
        inv_freq = 1.0 / (base ** (torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim))
        angles = torch.arange(max_seq_len, dtype=torch.float64).unsqueeze(1) * inv_freq.unsqueeze(0)
        self.register_buffer('cos', angles.cos().float(), persistent=False)
        self.register_buffer('sin', angles.sin().float(), persistent=False)

    def forward(self, input: Tensor) -> Tensor:
        """
        :param input: (batch, heads, seq, head_dim)
        """
        seq_len = input.shape[-2]
        cos, sin = self.cos[:seq_len], self.sin[:seq_len]
        even, odd = input[..., 0::2], input[..., 1::2]
        return torch.stack([even * cos - odd * sin, even * sin + odd * cos], dim=-1).flatten(-2)


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, max_seq_len: int):
        super().__init__()
        assert d_model % n_heads == 0
        self.n_heads, self.head_dim = n_heads, d_model // n_heads
        self.query = nn.Linear(d_model, d_model, bias=False)
        self.key = nn.Linear(d_model, d_model, bias=False)
        self.value = nn.Linear(d_model, d_model, bias=False)
        self.output = nn.Linear(d_model, d_model, bias=False)
        self.rotary = RotaryEmbedding(self.head_dim, max_seq_len)
        self.register_buffer(
            'mask', torch.tril(torch.ones(max_seq_len, max_seq_len, dtype=torch.bool)), persistent=False
        )

    def _split(self, input: Tensor) -> Tensor:
        batch, seq, _ = input.shape
        return input.view(batch, seq, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, input: Tensor) -> Tensor:
        batch, seq, d_model = input.shape
        queries = self.rotary(self._split(self.query(input)))
        keys = self.rotary(self._split(self.key(input)))
        values = self._split(self.value(input))

        scores = queries @ keys.transpose(-1, -2) / (self.head_dim ** 0.5)
        scores = scores.masked_fill(~self.mask[:seq, :seq], float('-inf'))
        attended = torch.softmax(scores, dim=-1) @ values
        return self.output(attended.transpose(1, 2).reshape(batch, seq, d_model))


class GatedMLP(nn.Module):
    """
    MLP(h) = (SiLU(W_gate h) * (W_up h)) W_down, with W_gate, W_up, W_down of shape (d_mlp, d_model):
    neuron i reads with gate row g_i and up row u_i and writes along down row d_i.
    """
    def __init__(self, layer: int, d_model: int, d_mlp: int):
        super().__init__()
        self.W_gate = nn.Parameter(torch.empty(d_mlp, d_model))
        self.W_up = nn.Parameter(torch.empty(d_mlp, d_model))
        self.W_down = nn.Parameter(torch.empty(d_mlp, d_model))
        self.hook_gate_act = HookPoint(layer, MLP_GATE_ACT)
        self.hook_up_act = HookPoint(layer, MLP_UP_ACT)
        self.hook_combined_act = HookPoint(layer, MLP_COMBINED_ACT)

    def forward(self, input: Tensor) -> Tensor:
        gate = self.hook_gate_act(F.silu(input @ self.W_gate.t()))
        up = self.hook_up_act(input @ self.W_up.t())
        return self.hook_combined_act(gate * up) @ self.W_down


class DecoderBlock(nn.Module):
    """Pre-norm block: x + attn(norm(x)), then + mlp(norm(x))"""
    def __init__(self, layer: int, d_model: int, n_heads: int, d_mlp: int, max_seq_len: int, eps: float=1e-5):
        super().__init__()
        self.attn_norm = RMSNorm(d_model, eps)
        self.attn = CausalSelfAttention(d_model, n_heads, max_seq_len)
        self.mlp_norm = RMSNorm(d_model, eps)
        self.mlp = GatedMLP(layer, d_model, d_mlp)
        self.hook_resid_pre = HookPoint(layer, RESID_PRE)
        self.hook_resid_post_attn = HookPoint(layer, RESID_POST_ATTN)
        self.hook_mlp_in = HookPoint(layer, MLP_IN)
        self.hook_mlp_out = HookPoint(layer, MLP_OUT)
        self.hook_resid_post_mlp = HookPoint(layer, RESID_POST_MLP)

    def forward(self, input: Tensor) -> Tensor:
        resid = self.hook_resid_pre(input)
        resid = self.hook_resid_post_attn(resid + self.attn(self.attn_norm(resid)))
        mlp_out = self.hook_mlp_out(self.mlp(self.hook_mlp_in(self.mlp_norm(resid))))
        return self.hook_resid_post_mlp(resid + mlp_out)
