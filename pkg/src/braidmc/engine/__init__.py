from .core import *
from .run import *
