"""Some generic utilities (seeding, validity checks, hashing) and the error hierarchy"""
from .errors import *
from .utils import *
