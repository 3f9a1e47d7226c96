"""Fourier probes, circular probes and probe/subspace overlap"""
from .fourier import *
from .circular import *
from .overlap import *
