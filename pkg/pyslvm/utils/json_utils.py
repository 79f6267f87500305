import dataclasses
import enum
import json
from collections import abc as collections_abc

import numpy as np
import tensorflow as tf


def get_json_type(obj):
    """Serializes any object to a JSON-serializable structure.

  Arguments:
      obj: the object to serialize

  Returns:
      JSON-serializable structure representing `obj`.

  Raises:
      TypeError: if `obj` cannot be serialized.
  """
    # if obj is a serializable Keras class instance
    # e.g. optimizer, layer
    if hasattr(obj, 'get_config'):
        return {'class_name': obj.__class__.__name__, 'config': obj.get_config()}

    # if obj is any numpy type
    if type(obj).__module__ == np.__name__:
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        else:
            return obj.item()

    if isinstance(obj, tf.Tensor):
        return obj.numpy().tolist()

    if isinstance(obj, tf.TensorShape):
        return obj.as_list()

    if isinstance(obj, tf.DType):
        return obj.name

    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return dataclasses.asdict(obj)

    if isinstance(obj, (set, frozenset)):
        return sorted(obj)

    if isinstance(obj, collections_abc.Mapping):
        return dict(obj)

    if isinstance(obj, enum.Enum):
        return obj.value

    # misc functions (e.g. loss function)
    if callable(obj):
        return obj.__name__

    raise TypeError('Not JSON Serializable:', obj)


def decode(json_string):
    """Parses a manifest; tuples written by get_json_type come back as lists."""
    return json.loads(json_string)
