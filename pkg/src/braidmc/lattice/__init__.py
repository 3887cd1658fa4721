from .core import *
from .model import *
