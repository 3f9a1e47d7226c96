"""Tensor arithmetic, linear algebra, gradients and tensor serialization"""
from .linalg import *
from .autograd import *
from .serialization import *
