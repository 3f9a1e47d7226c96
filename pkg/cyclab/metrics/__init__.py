from .metrics import *
from .classification import *
