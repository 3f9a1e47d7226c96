"""
Prompt templates as token patterns. Every word, punctuation mark and slot is one token; '{concept}' and
'{offset}' are the slots. Variant 0 is the default template; variants 1 and 2 are rephrasings.
"""
from typing import Dict, Tuple
from ..utils import DomainError


__all__ = ['CONCEPT_SLOT', 'OFFSET_SLOT', 'MODULUS_SLOT', 'TEMPLATES', 'get_template', 'template_keywords']


CONCEPT_SLOT = '{concept}'
OFFSET_SLOT = '{offset}'
MODULUS_SLOT = '{modulus}'


def _t(text: str) -> Tuple[str, ...]:
    return tuple(text.split())


TEMPLATES: Dict[str, Tuple[Tuple[str, ...], ...]] = {
    'months': (
        _t("Q: What month is {offset} months after {concept} ? A:"),
        _t("Question: The current month is {concept} . In {offset} months , it will be my birthday . "
           "What month is my birthday ? Answer: My birthday is in"),
        _t("Q: A pregnant woman will give birth in {offset} months . If it is currently {concept} , "
           "what month will she give birth ? Answer: She will give birth in"),
    ),
    'weekdays': (
        _t("Q: What day is {offset} days after {concept} ? A:"),
        _t("Question: Today is {concept} . In {offset} days , what day will it be ? Answer: It will be"),
        _t("If today is {concept} , and I have a deadline in {offset} days , what day is my deadline ? "
           "My deadline is on"),
    ),
    'hours': (
        _t("Q: In 24-hour time , it is now {concept} . What time will it be in {offset} hours ? "
           "A: In 24-hour time , it will be"),
        _t("Question: It's {concept} right now . My flight is in {offset} hours . What time is my flight ? "
           "Answer: My flight is at"),
        _t("When I was in the military , I learned 24-hour time . So if right now it is {concept} , "
           "in {offset} hours it will be"),
    ),
    'addition': (
        _t("{concept} + {offset} ="),
    ),
    'explicit_mod': (
        _t("Q: What is ( {concept} + {offset} ) mod {modulus} ? A:"),
    ),
}


def get_template(task: str, variant: int=0) -> Tuple[str, ...]:
    if task not in TEMPLATES:
        raise DomainError("unknown task " + repr(task))
    if not 0 <= variant < len(TEMPLATES[task]):
        raise DomainError("task " + task + " has no template variant " + str(variant))
    return TEMPLATES[task][variant]


def template_keywords() -> Tuple[str, ...]:
    """Every non-slot token used by any template, in first-appearance order"""
    keywords = []
    for variants in TEMPLATES.values():
        for template in variants:
            for token in template:
                if token not in (CONCEPT_SLOT, OFFSET_SLOT, MODULUS_SLOT) and token not in keywords:
                    keywords.append(token)
    return tuple(keywords)
