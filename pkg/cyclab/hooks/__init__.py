"""Hook points, activation caching and interventions on hooked models"""
from .hooks import *
from .points import *
from .actions import *
from .cache import *
from .runner import *
