"""
Abstract input-output model of a cyclic task.

Variables: N (offset), C_in (input concept), B (base), K = con_to_num(C_in), S = N + K, M = S mod B,
C_out = num_to_con(M). An infinite base (B = None) makes M = S.
"""
from typing import Dict, Optional, Union
from ..utils import DomainError
from .spec import TaskSpec


__all__ = [
    'CausalModel', 'VARIABLES', 'INTERCHANGE_VARIABLES', 'causal_eval', 'causal_interchange', 'causal_model_for'
]


VARIABLES = ('N', 'C_in', 'B', 'K', 'S', 'M', 'C_out')
# interchangeable variables, by the names used for counterfactual pairs and subspaces
INTERCHANGE_VARIABLES = {'input_concept': 'C_in', 'offset': 'N', 'output_concept': 'C_out'}


class CausalModel:
    """
    :param spec: the task
    :param modulus: base override (explicit_mod prompts carry their own modulus)
    """
    def __init__(self, spec: TaskSpec, modulus: Optional[int]=None):
        self.spec = spec
        self.base = modulus if modulus is not None else spec.period
        self.con_to_num: Dict[str, int] = {c: spec.concept_value(c) for c in spec.concept_names}
        if self.base is not None:
            self._residue_to_con = {value % self.base: c for c, value in self.con_to_num.items()}
        else:
            self._residue_to_con = {value: c for c, value in self.con_to_num.items()}

    def num_to_con(self, m: int) -> str:
        if self.spec.name in ('addition', 'explicit_mod'):
            return str(m)
        key = m % self.base
        if key not in self._residue_to_con:
            raise DomainError("no concept for residue " + str(m) + " in task " + self.spec.name)
        return self._residue_to_con[key]

    def reduce(self, s: int) -> int:
        return s if self.base is None else s % self.base

    def run(self, concept: str, offset: int, interventions: Optional[Dict[str, Union[int, str]]]=None) -> Dict:
        """
        Evaluate every variable, with `interventions` (variable -> fixed value) overriding mechanisms
        """
        fixed = {} if interventions is None else dict(interventions)
        for name in fixed:
            if name not in VARIABLES:
                raise DomainError("unknown causal variable " + repr(name))

        values = {}
        values['N'] = fixed.get('N', offset)
        values['C_in'] = fixed.get('C_in', concept)
        values['B'] = fixed.get('B', self.base)
        if 'K' in fixed:
            values['K'] = fixed['K']
        else:
            if values['C_in'] not in self.con_to_num:
                raise DomainError("concept " + repr(values['C_in']) + " is not in task " + self.spec.name)
            values['K'] = self.con_to_num[values['C_in']]
        values['S'] = fixed.get('S', values['N'] + values['K'])
        base = values['B']
        values['M'] = fixed.get('M', values['S'] if base is None else values['S'] % base)
        values['C_out'] = fixed.get('C_out', self.num_to_con(values['M']))
        return values


def causal_model_for(prompt) -> CausalModel:
    return CausalModel(prompt.spec, prompt.modulus if prompt.spec.name == 'explicit_mod' else None)


def causal_eval(model: CausalModel, concept: str, offset: int) -> str:
    """num_to_con((offset + con_to_num(concept)) mod B)"""
    return model.run(concept, offset)['C_out']


def causal_interchange(model: CausalModel, original, counterfactual, variable: str) -> str:
    """
    Output on `original` with `variable` fixed to the value it takes on `counterfactual`

    :param variable: input_concept, offset, output_concept, or a raw variable name (K, S, M, ...)
    """
    if original.spec.name != counterfactual.spec.name:
        raise DomainError("interchange needs prompts of one task, got " + original.spec.name
                          + " and " + counterfactual.spec.name)
    name = INTERCHANGE_VARIABLES.get(variable, variable)
    if name not in VARIABLES:
        raise DomainError("unknown causal variable " + repr(variable))
    source = model.run(counterfactual.concept, counterfactual.offset)
    return model.run(original.concept, original.offset, {name: source[name]})['C_out']
