from dataclasses import dataclass, asdict, field
from typing import Any, Dict, Optional, Tuple
from ..utils import DomainError, ConfigError
from .templates import get_template, CONCEPT_SLOT, OFFSET_SLOT
from .vocab import MONTHS, WEEKDAYS, HOURS, number_word, numeral


__all__ = [
    'TaskSpec', 'CYCLIC_TASKS', 'TASK_NAMES', 'months_spec', 'weekdays_spec', 'hours_spec',
    'addition_spec', 'explicit_mod_spec', 'get_task_spec'
]


CYCLIC_TASKS = ('months', 'weekdays', 'hours')
TASK_NAMES = CYCLIC_TASKS + ('addition', 'explicit_mod')


@dataclass(frozen=True)
class TaskSpec:
    """
    Definition of a task.

    :param name: months, weekdays, hours, addition or explicit_mod
    :param period: cycle length p; None stands for an infinite base (addition, explicit_mod)
    :param concept_names: ordered concept tokens
    :param concept_indexing: 'one' (January=1), 'zero' (00:00=0) or 'identity' (numbers)
    :param offset_range: inclusive (lo, hi) range of offsets
    :param template_variant: index into the task's templates
    :param weekday_offset: additive shift of the weekday enumeration
    :param concept_start: integer value of the first concept for identity-indexed tasks
    """
    name: str
    period: Optional[int]
    concept_names: Tuple[str, ...]
    concept_indexing: str
    offset_range: Tuple[int, int]
    template_variant: int = 0
    weekday_offset: int = 0
    concept_start: int = 0
    template: Tuple[str, ...] = field(init=False, compare=False)

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise DomainError("unknown task " + repr(self.name))
        if self.period is not None and len(self.concept_names) != self.period:
            raise DomainError("cyclic task " + self.name + " needs exactly " + str(self.period) + " concepts")
        if self.offset_range[0] > self.offset_range[1]:
            raise DomainError("empty offset range " + str(self.offset_range))
        template = get_template(self.name, self.template_variant)
        assert CONCEPT_SLOT in template and OFFSET_SLOT in template
        object.__setattr__(self, 'template', template)

    @property
    def is_cyclic(self) -> bool: return self.period is not None

    @property
    def offsets(self) -> range: return range(self.offset_range[0], self.offset_range[1] + 1)

    def concept_value(self, concept: str) -> int:
        """Number-space value of a concept (con_to_num)"""
        try:
            i = self.concept_names.index(concept)
        except ValueError:
            raise DomainError("concept " + repr(concept) + " is not in task " + self.name)
        if self.concept_indexing == 'one':
            return i + 1 + (self.weekday_offset if self.name == 'weekdays' else 0)
        if self.concept_indexing == 'zero':
            return i
        return self.concept_start + i

    def offset_token(self, offset: int) -> str:
        return number_word(offset) if self.is_cyclic else numeral(offset)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d.pop('template')
        d['concept_names'] = list(self.concept_names)
        d['offset_range'] = list(self.offset_range)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'TaskSpec':
        try:
            return cls(
                name=d['name'], period=d['period'], concept_names=tuple(d['concept_names']),
                concept_indexing=d['concept_indexing'], offset_range=tuple(d['offset_range']),
                template_variant=d.get('template_variant', 0), weekday_offset=d.get('weekday_offset', 0),
                concept_start=d.get('concept_start', 0)
            )
        except KeyError as e:
            raise ConfigError("task spec is missing field " + str(e))


def months_spec(template_variant: int=0, max_offset: int=24) -> TaskSpec:
    return TaskSpec('months', 12, MONTHS, 'one', (1, max_offset), template_variant)


def weekdays_spec(template_variant: int=0, weekday_offset: int=0, max_offset: int=14) -> TaskSpec:
    return TaskSpec('weekdays', 7, WEEKDAYS, 'one', (1, max_offset), template_variant, weekday_offset)


def hours_spec(template_variant: int=0, max_offset: int=48) -> TaskSpec:
    return TaskSpec('hours', 24, HOURS, 'zero', (1, max_offset), template_variant)


def addition_spec(a_range: Tuple[int, int]=(1, 100), b_range: Tuple[int, int]=(1, 100)) -> TaskSpec:
    """Addition a + b; a plays the concept, b the offset"""
    concepts = tuple(numeral(a) for a in range(a_range[0], a_range[1] + 1))
    return TaskSpec('addition', None, concepts, 'identity', tuple(b_range), concept_start=a_range[0])


def explicit_mod_spec(a_range: Tuple[int, int]=(1, 200), b_range: Tuple[int, int]=(1, 200)) -> TaskSpec:
    concepts = tuple(numeral(a) for a in range(a_range[0], a_range[1] + 1))
    return TaskSpec('explicit_mod', None, concepts, 'identity', tuple(b_range), concept_start=a_range[0])


_FACTORIES = {
    'months': months_spec, 'weekdays': weekdays_spec, 'hours': hours_spec,
    'addition': addition_spec, 'explicit_mod': explicit_mod_spec
}


def get_task_spec(name: str, **kwargs) -> TaskSpec:
    """
    Build a task spec with the default ranges, e.g. get_task_spec('weekdays', weekday_offset=4)
    """
    if name not in _FACTORIES:
        raise DomainError("unknown task " + repr(name))
    try:
        return _FACTORIES[name](**kwargs)
    except TypeError as e:
        raise ConfigError("bad parameters for task " + name + ": " + str(e))
