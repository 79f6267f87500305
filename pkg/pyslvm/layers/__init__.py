from pyslvm.layers.prior import (PriorMask, FusedQueryFeatures, mask_weight_features, prior_map, normalize_prior,
                                 aggregate_shots, fuse, episode_prior, constant_prior, export_prior_png)
from pyslvm.layers.gate import PromptGate, gate, gate_and_decode
