"""Fourier-feature steering"""
from .steering import *
