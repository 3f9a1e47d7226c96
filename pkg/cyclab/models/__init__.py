from .config import *
from .transformer import *
from .checkpoint import *
from .inference import *
