"""
Hand-built networks with known mechanisms, used as oracles for interventions, probes and steering.
Every network reads its inputs straight from the token ids and exposes HookPoint sites like TransformerModel.
"""
import math
import torch
from torch import nn, Tensor
from typing import List, Sequence, Tuple
from ..hooks import HookedModule, HookPoint, RESID_POST_ATTN, RESID_POST_MLP
from ..interventions import Subspace, random_orthonormal
from ..probes import FourierProbePair
from ..tasks import MONTHS, default_vocabulary, number_word, numeral, months_spec, CausalModel


__all__ = [
    'fourier_code', 'token_value_tables', 'PlantedSubspaceNetwork', 'PlantedSumNetwork', 'PlantedFourierModel'
]


NEG_INF = -1e4


def fourier_code(values: Tensor, periods: Sequence[int]) -> Tensor:
    """(..., 2 |periods|) features [cos, sin](2πx/T), period by period"""
    values = values.to(torch.float32).unsqueeze(-1)
    features = []
    for period in periods:
        angle = 2 * math.pi * values / period
        features += [torch.cos(angle), torch.sin(angle)]
    return torch.cat(features, dim=-1)


def token_value_tables() -> Tuple[Tensor, Tensor, Tensor]:
    """Per token id: numeral value, number-word value and month index (1-12); 0 elsewhere"""
    vocab = default_vocabulary()
    numerals, words, months = (torch.zeros(len(vocab), dtype=torch.long) for _ in range(3))
    for i, token in enumerate(vocab.tokens):
        if token.isdigit():
            numerals[i] = int(token)
    for n in range(1, 49):
        words[vocab.token_id(number_word(n))] = n
    for i, month in enumerate(MONTHS):
        months[vocab.token_id(month)] = i + 1
    return numerals, words, months


class PlantedSubspaceNetwork(HookedModule):
    """
    Addition network a + b whose final-position state is

        h = a_scale Q code(a) + b_scale P code(b)

    with Q, P orthonormal and mutually orthogonal (d_model, k). The output decodes a and b back from
    Q^T h and P^T h, so span(Q) is exactly the causal subspace of the input concept `a`.
    Prompts: addition_spec((0, max_value), (0, max_value)).
    """
    def __init__(
            self, d_model: int=64, periods: Sequence[int]=(5, 20), a_scale: float=3.0, b_scale: float=0.3,
            sharpness: float=10.0, max_value: int=19, seed: int=0
    ):
        super().__init__()
        self.periods, self.a_scale, self.b_scale = tuple(periods), a_scale, b_scale
        self.sharpness, self.max_value = sharpness, max_value
        k = 2 * len(self.periods)
        basis = random_orthonormal(d_model, 2 * k, torch.Generator().manual_seed(seed)).float()
        self.register_buffer('Q', basis[:, :k].contiguous())
        self.register_buffer('P', basis[:, k:].contiguous())
        numerals, _, _ = token_value_tables()
        self.register_buffer('numerals', numerals)

        values = torch.arange(max_value + 1)
        self.register_buffer('codes', fourier_code(values, self.periods))
        sums = (values.unsqueeze(1) + values.unsqueeze(0)).flatten()
        vocab = default_vocabulary()
        self.register_buffer('sum_ids', torch.tensor(vocab.encode([numeral(s) for s in range(2 * max_value + 1)])))
        # (n_sums, n_pairs) log-mask of the (a', b') pairs adding up to each sum
        mask = sums.unsqueeze(0) == torch.arange(2 * max_value + 1).unsqueeze(1)
        self.register_buffer('pair_mask', torch.where(mask, torch.tensor(0.0), torch.tensor(-1e9)))
        self.vocab_size = len(vocab)
        self.hook = HookPoint(0, RESID_POST_ATTN)

    @property
    def k(self) -> int: return self.Q.shape[1]

    def planted_subspace(self) -> Subspace:
        return Subspace(self.Q.clone(), task='addition', variable='input_concept', hook_point=RESID_POST_ATTN)

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        n_batch, seq_len = tokens.shape
        a, b = self.numerals[tokens[:, -4]], self.numerals[tokens[:, -2]]
        final = self.a_scale * fourier_code(a, self.periods) @ self.Q.t() \
            + self.b_scale * fourier_code(b, self.periods) @ self.P.t()
        resid = torch.zeros(n_batch, seq_len, self.Q.shape[0])
        resid = torch.cat([resid[:, :-1], final.unsqueeze(1)], dim=1)
        resid = self.hook(resid)

        read_a = (resid @ self.Q) / self.a_scale
        read_b = (resid @ self.P) / self.b_scale
        dist_a = ((read_a.unsqueeze(-2) - self.codes) ** 2).sum(-1)
        dist_b = ((read_b.unsqueeze(-2) - self.codes) ** 2).sum(-1)
        scores = -self.sharpness * (dist_a.unsqueeze(-1) + dist_b.unsqueeze(-2)).flatten(-2)
        sum_logits = torch.logsumexp(scores.unsqueeze(-2) + self.pair_mask, dim=-1)

        logits = torch.full((n_batch, seq_len, self.vocab_size), NEG_INF)
        return logits.index_copy(-1, self.sum_ids, sum_logits)


class PlantedSumNetwork(HookedModule):
    """
    Encodes the pre-modulo sum of an addition or months prompt as h = Q f(s) (f: Fourier features over
    `periods`) plus a task marker, and decodes s back: as a numeral for addition, as the month of s for
    months. Q spans the subspace both tasks share, so patching it carries the sum across tasks.
    """
    def __init__(self, d_model: int=16, periods: Sequence[int]=(5, 10, 20, 50), gamma: float=20.0,
                 max_sum: int=99, seed: int=0):
        super().__init__()
        self.periods, self.gamma = tuple(periods), gamma
        k = 2 * len(self.periods)
        assert d_model > k
        basis = random_orthonormal(d_model, k + 1, torch.Generator().manual_seed(seed)).float()
        self.register_buffer('Q', basis[:, :k].contiguous())
        self.register_buffer('marker', basis[:, k].contiguous())
        numerals, words, months = token_value_tables()
        self.register_buffer('numerals', numerals)
        self.register_buffer('words', words)
        self.register_buffer('months', months)

        vocab = default_vocabulary()
        sums = torch.arange(max_sum + 1)
        self.register_buffer('codes', fourier_code(sums, self.periods))
        self.register_buffer('numeral_ids', torch.tensor(vocab.encode([numeral(s) for s in range(max_sum + 1)])))
        causal = CausalModel(months_spec())
        month_of_sum = torch.tensor([MONTHS.index(causal.num_to_con(s)) for s in range(max_sum + 1)])
        mask = month_of_sum.unsqueeze(0) == torch.arange(12).unsqueeze(1)
        self.register_buffer('month_mask', torch.where(mask, torch.tensor(0.0), torch.tensor(-1e9)))
        self.register_buffer('month_ids', torch.tensor(vocab.encode(list(MONTHS))))
        self.vocab_size = len(vocab)
        self.hook = HookPoint(0, RESID_POST_MLP)

    def probes(self) -> List[FourierProbePair]:
        """Exact sine/cosine readouts of every planted period"""
        return [
            FourierProbePair(period, 0, self.Q[:, 2 * i + 1].clone(), self.Q[:, 2 * i].clone(), r2_sin=1.0, r2_cos=1.0)
            for i, period in enumerate(self.periods)
        ]

    def sum_subspace(self, task: str='addition+months') -> Subspace:
        return Subspace(self.Q.clone(), task=task, variable='output_concept', hook_point=RESID_POST_MLP)

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        n_batch, seq_len = tokens.shape
        sums = (self.numerals[tokens] + self.words[tokens] + self.months[tokens]).sum(dim=1)
        is_months = (self.months[tokens] > 0).any(dim=1)
        final = fourier_code(sums, self.periods) @ self.Q.t() + is_months.float().unsqueeze(1) * self.marker
        resid = torch.zeros(n_batch, seq_len, self.Q.shape[0])
        resid = torch.cat([resid[:, :-1], final.unsqueeze(1)], dim=1)
        resid = self.hook(resid)

        scores = self.gamma * (resid @ self.Q) @ self.codes.t()
        month_logits = torch.logsumexp(scores.unsqueeze(-2) + self.month_mask, dim=-1)
        months_row = (resid @ self.marker > 0.5).unsqueeze(-1)

        logits = torch.full((n_batch, seq_len, self.vocab_size), NEG_INF)
        addition = logits.index_copy(-1, self.numeral_ids, scores)
        months = logits.index_copy(-1, self.month_ids, month_logits)
        return torch.where(months_row, months, addition)


class PlantedFourierModel(HookedModule):
    """
    Addition prompts whose resid_post_mlp state at `planted_layer` is amplitude * Σ_T [cos, sin](2πs/T) in
    an orthonormal basis, s = a + b, plus Gaussian noise (σ) fixed per (layer, a, b); other layers carry
    noise only. Logits are zero.
    """
    def __init__(self, n_layers: int=3, planted_layer: int=1, periods: Sequence[int]=(2, 5, 10),
                 amplitude: float=5.0, d_model: int=32, sigma: float=0.01, max_value: int=30, seed: int=0):
        super().__init__()
        self.periods, self.planted_layer, self.amplitude = tuple(periods), planted_layer, amplitude
        generator = torch.Generator().manual_seed(seed)
        self.register_buffer('basis', random_orthonormal(d_model, 2 * len(self.periods), generator).float())
        self.register_buffer(
            'noise', sigma * torch.randn(n_layers, max_value + 1, max_value + 1, d_model, generator=generator)
        )
        numerals, _, _ = token_value_tables()
        self.register_buffer('numerals', numerals)
        self.vocab_size = len(default_vocabulary())
        self.points = nn.ModuleList([HookPoint(layer, RESID_POST_MLP) for layer in range(n_layers)])

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        n_batch, seq_len = tokens.shape
        a, b = self.numerals[tokens[:, -4]], self.numerals[tokens[:, -2]]
        signal = self.amplitude * fourier_code(a + b, self.periods) @ self.basis.t()
        for layer, point in enumerate(self.points):
            final = self.noise[layer, a, b] + (signal if layer == self.planted_layer else 0.0)
            resid = torch.zeros(n_batch, seq_len, self.basis.shape[0])
            point(torch.cat([resid[:, :-1], final.unsqueeze(1)], dim=1))
        return torch.zeros(n_batch, seq_len, self.vocab_size)
