from pyslvm.networks.network import Network, EncoderOutput, weights_fingerprint
from pyslvm.networks.encoder_network import SurrogateEncoder
from pyslvm.networks.decoder_network import MaskDecoder
from pyslvm.networks.prompt_network import PromptLearner, derive_prompt_indicators, embed_prior, downsample
