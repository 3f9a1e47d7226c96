from .callbacks import *
from .checkpoint import *
from .nan import *
from .logger import *
