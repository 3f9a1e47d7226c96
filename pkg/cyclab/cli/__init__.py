"""Experiment configuration, the staged pipeline, report bundles and artifact verification"""
from .config import *
from .report import *
from .artifacts import *
from .pipeline import *
