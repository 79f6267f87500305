from pyslvm.embeddings.cache import encode_tensor, decode_tensor, write_tensor, read_tensor, is_valid_tensor_file
from pyslvm.embeddings.provider import (FeaturePair, EncoderHandle, build_surrogate_encoder, encode, verify_frozen,
                                        save_cached_embedding, load_cached_embedding, cache_paths,
                                        EmbeddingProvider, SurrogateProvider, CacheProvider)
