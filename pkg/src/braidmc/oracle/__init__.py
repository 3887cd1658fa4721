from .ed import *
from .trotter import *
