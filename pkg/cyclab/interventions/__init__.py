"""Interchange patching, distributed alignment search and subspace geometry"""
from .subspace import *
from .patching import *
from .das import *
