"""Toy tokenizer: every concept, number word, numeral and template keyword is a single token"""
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple
from ..utils import DomainError
from .templates import template_keywords


__all__ = [
    'PAD', 'BOS', 'MONTHS', 'WEEKDAYS', 'HOURS', 'MAX_NUMERAL', 'MAX_NUMBER_WORD',
    'number_word', 'numeral', 'Vocabulary', 'default_vocabulary'
]


PAD = '<pad>'
BOS = '<bos>'
MONTHS = (
    'January', 'February', 'March', 'April', 'May', 'June',
    'July', 'August', 'September', 'October', 'November', 'December'
)
WEEKDAYS = ('Monday', 'Tuesday', 'Wednesday', 'Thursday', 'Friday', 'Saturday', 'Sunday')
HOURS = tuple("{:02d}:00".format(h) for h in range(24))
MAX_NUMERAL = 200
MAX_NUMBER_WORD = 48

_ONES = (
    'zero', 'one', 'two', 'three', 'four', 'five', 'six', 'seven', 'eight', 'nine', 'ten',
    'eleven', 'twelve', 'thirteen', 'fourteen', 'fifteen', 'sixteen', 'seventeen', 'eighteen', 'nineteen'
)
_TENS = ('', '', 'twenty', 'thirty', 'forty')


def number_word(n: int) -> str:
    """English word for 1 <= n <= 48 (e.g. 24 -> 'twenty-four')"""
    if not 1 <= n <= MAX_NUMBER_WORD:
        raise DomainError("no number word for " + str(n))
    if n < 20:
        return _ONES[n]
    tens, ones = divmod(n, 10)
    return _TENS[tens] if ones == 0 else _TENS[tens] + '-' + _ONES[ones]


def numeral(n: int) -> str:
    if not 0 <= n <= MAX_NUMERAL:
        raise DomainError("no numeral token for " + str(n))
    return str(n)


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        assert len(set(tokens)) == len(tokens), "duplicate vocabulary tokens"
        self._tokens: Tuple[str, ...] = tuple(tokens)
        self._ids: Dict[str, int] = {token: i for i, token in enumerate(self._tokens)}

    def __len__(self) -> int: return len(self._tokens)

    def __contains__(self, token: str) -> bool: return token in self._ids

    @property
    def tokens(self) -> Tuple[str, ...]: return self._tokens

    def token_id(self, token: str) -> int:
        if token not in self._ids:
            raise DomainError("token " + repr(token) + " is not in the vocabulary")
        return self._ids[token]

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise DomainError("token id " + str(token_id) + " is out of range")
        return self._tokens[token_id]

    def encode(self, tokens: Sequence[str]) -> List[int]: return [self.token_id(token) for token in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]: return [self.token(int(i)) for i in ids]


@lru_cache(maxsize=None)
def default_vocabulary() -> Vocabulary:
    tokens = [PAD, BOS]
    tokens += [numeral(n) for n in range(MAX_NUMERAL + 1)]
    tokens += [number_word(n) for n in range(1, MAX_NUMBER_WORD + 1)]
    tokens += list(MONTHS) + list(WEEKDAYS) + list(HOURS)
    tokens += [keyword for keyword in template_keywords() if keyword not in tokens]
    return Vocabulary(tokens)
