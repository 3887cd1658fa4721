from .config import *
from .core import *
