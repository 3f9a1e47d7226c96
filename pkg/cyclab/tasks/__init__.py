"""Cyclic-arithmetic tasks: templates, vocabulary, causal model, datasets and accuracy breakdowns"""
from .templates import *
from .vocab import *
from .spec import *
from .causal import *
from .datasets import *
from .breakdown import *
