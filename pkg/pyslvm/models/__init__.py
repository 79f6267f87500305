from pyslvm.models.segmenter import FewShotSegmenter
from pyslvm.models.slvm import SLVM, EpisodeFeatures, ForwardOutput, forward
