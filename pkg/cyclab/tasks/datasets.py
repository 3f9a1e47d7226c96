import json
import numpy as np
import torch
from torch import Tensor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple
from ..utils import GenerationError, SamplingError, DomainError, ArtifactError, LabError
from .templates import CONCEPT_SLOT, OFFSET_SLOT, MODULUS_SLOT
from .vocab import BOS, Vocabulary, default_vocabulary, numeral
from .spec import TaskSpec, explicit_mod_spec
from .causal import CausalModel, INTERCHANGE_VARIABLES, causal_model_for, causal_interchange


__all__ = [
    'PromptInstance', 'CounterfactualPair', 'make_prompt', 'generate_dataset', 'generate_explicit_mod',
    'sample_counterfactual_pairs', 'prompt_batch', 'save_dataset', 'load_dataset'
]


@dataclass(frozen=True)
class PromptInstance:
    spec: TaskSpec
    concept: str
    concept_index: int
    offset: int
    tokens: Tuple[str, ...]
    token_ids: Tuple[int, ...]
    pre_modulo_sum: int
    gold_label: str
    gold_id: int
    concept_position: int
    offset_position: int
    modulus: Optional[int] = None

    @property
    def task(self) -> str: return self.spec.name

    @property
    def final_position(self) -> int: return len(self.tokens) - 1

    @property
    def period(self) -> Optional[int]:
        """Cycle length used for this prompt (the prompt's own modulus for explicit_mod)"""
        return self.modulus if self.modulus is not None else self.spec.period

    def position(self, tag: str) -> int:
        """Resolve a position tag: concept, offset or final"""
        positions = {
            'concept': self.concept_position, 'offset': self.offset_position, 'final': self.final_position
        }
        if tag not in positions:
            raise DomainError("unknown position tag " + repr(tag))
        return positions[tag]

    def variable_value(self, variable: str):
        """Value of an interchange variable on this prompt"""
        if variable == 'input_concept': return self.concept
        if variable == 'offset': return self.offset
        if variable == 'output_concept': return self.gold_label
        raise DomainError("unknown variable " + repr(variable))


@dataclass(frozen=True)
class CounterfactualPair:
    original: PromptInstance
    counterfactual: PromptInstance
    variable: str
    target_label: str
    target_id: int

    @property
    def values_differ(self) -> bool:
        return self.original.variable_value(self.variable) != self.counterfactual.variable_value(self.variable)


def make_prompt(
        spec: TaskSpec, concept: str, offset: int, modulus: Optional[int]=None, vocab: Vocabulary=None
) -> PromptInstance:
    vocab = default_vocabulary() if vocab is None else vocab
    model = CausalModel(spec, modulus)
    values = model.run(concept, offset)

    tokens = [BOS]
    concept_position = offset_position = -1
    for token in spec.template:
        if token == CONCEPT_SLOT:
            concept_position = len(tokens)
            tokens.append(concept)
        elif token == OFFSET_SLOT:
            offset_position = len(tokens)
            tokens.append(spec.offset_token(offset))
        elif token == MODULUS_SLOT:
            tokens.append(numeral(modulus))
        else:
            tokens.append(token)

    return PromptInstance(
        spec=spec, concept=concept, concept_index=values['K'], offset=offset, tokens=tuple(tokens),
        token_ids=tuple(vocab.encode(tokens)), pre_modulo_sum=values['S'], gold_label=values['C_out'],
        gold_id=vocab.token_id(values['C_out']), concept_position=concept_position,
        offset_position=offset_position, modulus=modulus
    )


def generate_dataset(spec: TaskSpec, vocab: Vocabulary=None) -> List[PromptInstance]:
    """Every (concept, offset) combination, concepts outermost"""
    return [make_prompt(spec, concept, offset, vocab=vocab) for concept in spec.concept_names for offset in spec.offsets]


def generate_explicit_mod(
        a_range: Tuple[int, int]=(1, 200), b_range: Tuple[int, int]=(1, 200), k_range: Tuple[int, int]=(2, 100),
        sample_n: int=1000, seed: int=0, max_sum_factor: Optional[int]=None, vocab: Vocabulary=None
) -> List[PromptInstance]:
    """
    Sample explicit "(a + b) mod k" prompts.

    :param max_sum_factor: if given, only sample (a, b, k) with a + b <= max_sum_factor * k
    """
    if any(r[0] > r[1] for r in (a_range, b_range, k_range)):
        raise GenerationError("empty range in " + str((a_range, b_range, k_range)))
    spec = explicit_mod_spec(a_range, b_range)
    rng = np.random.default_rng(seed)

    if max_sum_factor is None:
        a = rng.integers(a_range[0], a_range[1] + 1, size=sample_n)
        b = rng.integers(b_range[0], b_range[1] + 1, size=sample_n)
        k = rng.integers(k_range[0], k_range[1] + 1, size=sample_n)
        triples = np.stack([a, b, k], axis=1)
    else:
        grid = np.stack(np.meshgrid(
            np.arange(a_range[0], a_range[1] + 1), np.arange(b_range[0], b_range[1] + 1),
            np.arange(k_range[0], k_range[1] + 1), indexing='ij'
        ), axis=-1).reshape(-1, 3)
        feasible = grid[grid[:, 0] + grid[:, 1] <= max_sum_factor * grid[:, 2]]
        if len(feasible) == 0:
            raise GenerationError("no (a, b, k) satisfies a + b <= " + str(max_sum_factor) + "k")
        triples = feasible[rng.integers(0, len(feasible), size=sample_n)]

    return [
        make_prompt(spec, numeral(int(a)), int(b), modulus=int(k), vocab=vocab)
        for a, b, k in triples
    ]


def sample_counterfactual_pairs(
        spec_or_dataset, variable: str, n_total: int, n_test: int, seed: int,
        correct_only_predicate: Optional[Callable[[PromptInstance], bool]]=None
) -> Tuple[List[CounterfactualPair], List[CounterfactualPair]]:
    """
    Sample (original, counterfactual) pairs uniformly with replacement from the prompts passing the predicate.
    The first n_test pairs form the test split.

    :param spec_or_dataset: a TaskSpec (dataset generated exhaustively) or a list of prompts of one task
    :param variable: input_concept, offset or output_concept
    :return: (train, test)
    """
    if variable not in INTERCHANGE_VARIABLES:
        raise DomainError("unknown variable " + repr(variable))
    if not 0 <= n_test <= n_total:
        raise SamplingError("need 0 <= n_test <= n_total, got " + str(n_test) + " and " + str(n_total))
    dataset = generate_dataset(spec_or_dataset) if isinstance(spec_or_dataset, TaskSpec) else list(spec_or_dataset)
    pool = dataset if correct_only_predicate is None else [p for p in dataset if correct_only_predicate(p)]
    if len(pool) == 0:
        raise SamplingError("no prompt passes the filter")

    vocab = default_vocabulary()
    rng = np.random.default_rng(seed)
    originals = rng.integers(0, len(pool), size=n_total)
    counterfactuals = rng.integers(0, len(pool), size=n_total)
    pairs = []
    for i, j in zip(originals, counterfactuals):
        o, c = pool[int(i)], pool[int(j)]
        target = causal_interchange(causal_model_for(o), o, c, variable)
        pairs.append(CounterfactualPair(o, c, variable, target, vocab.token_id(target)))
    return pairs[n_test:], pairs[:n_test]


def prompt_batch(prompts: Sequence[PromptInstance]) -> Tensor:
    """Stack equal-length prompts into a (batch, seq) id tensor"""
    lengths = {len(p.token_ids) for p in prompts}
    if len(lengths) != 1:
        raise DomainError("prompts of different lengths cannot share a batch: " + str(sorted(lengths)))
    return torch.tensor([p.token_ids for p in prompts], dtype=torch.long)


def save_dataset(dataset: Iterable[PromptInstance], path: str):
    """One JSON record per line: task spec, concept, offset, token ids and gold id"""
    with open(path, 'w') as f:
        for prompt in dataset:
            record = {
                'task': prompt.task, 'spec': prompt.spec.to_dict(), 'concept': prompt.concept,
                'concept_index': prompt.concept_index, 'offset': prompt.offset, 'modulus': prompt.modulus,
                'token_ids': list(prompt.token_ids), 'gold_id': prompt.gold_id
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(path: str, vocab: Vocabulary=None) -> List[PromptInstance]:
    """Rebuild prompts from their records; stored ids must match the regenerated ones"""
    dataset = []
    with open(path) as f:
        for line_no, line in enumerate(f):
            if not line.strip(): continue
            try:
                record = json.loads(line)
                prompt = make_prompt(
                    TaskSpec.from_dict(record['spec']), record['concept'], record['offset'],
                    record.get('modulus'), vocab
                )
            except (ValueError, KeyError, LabError) as e:
                raise ArtifactError("bad dataset record on line " + str(line_no + 1) + ": " + str(e), path)
            if list(prompt.token_ids) != record['token_ids'] or prompt.gold_id != record['gold_id']:
                raise ArtifactError("dataset record on line " + str(line_no + 1) + " does not match its task", path)
            dataset.append(prompt)
    return dataset
