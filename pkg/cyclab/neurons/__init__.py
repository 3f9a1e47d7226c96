"""Addition-neuron scoring, ablation and analysis"""
from .scores import *
from .ablation import *
from .analysis import *
