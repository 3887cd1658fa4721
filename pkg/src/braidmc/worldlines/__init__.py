from .core import *
from .checkpoint import *
