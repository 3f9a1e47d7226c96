"""Utilities for testing interpretability code: tolerances, tiny models and planted-mechanism networks"""
from .test import *
from .planted import *
