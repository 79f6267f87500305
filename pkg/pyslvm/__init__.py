from pyslvm import errors
from pyslvm import data
from pyslvm import networks
from pyslvm import embeddings
from pyslvm import layers
from pyslvm import utils
from pyslvm import models
