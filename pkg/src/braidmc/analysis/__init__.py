from .statistics import *
from .load import *
