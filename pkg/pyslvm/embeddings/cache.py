"""Binary tensor container shared by the embedding cache and prompt learner checkpoints.

Layout (little endian): magic "SLVM" | version u16 | ndim u8 | dims ndim x u32 | dtype u8 | payload | crc32 u32,
the payload being the row-major float32 tensor and the CRC being computed over the payload bytes only.
"""
import os
import struct
import zlib

import numpy as np

from pyslvm.errors import CacheFormatError

MAGIC = b'SLVM'
VERSION = 1
DTYPE_F32 = 0
MAX_NDIM = 8
MAX_ELEMENTS = 2 ** 31 // 4

_PREFIX = struct.Struct('<4sHB')
_CRC = struct.Struct('<I')
_PAYLOAD_DTYPE = np.dtype('<f4')


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if not 1 <= array.ndim <= MAX_NDIM:
        raise CacheFormatError(f'tensors must have 1 to {MAX_NDIM} dimensions, got {array.ndim}')
    payload = np.ascontiguousarray(array, dtype=_PAYLOAD_DTYPE).tobytes()
    header = _PREFIX.pack(MAGIC, VERSION, array.ndim) + struct.pack(f'<{array.ndim}I', *array.shape)
    header += struct.pack('<B', DTYPE_F32)
    return header + payload + _CRC.pack(zlib.crc32(payload))


def decode_tensor(data: bytes, source: str = '<bytes>', expected_ndim: int = None) -> np.ndarray:
    """Parses a container, validating header, length and checksum.

    Raises:
        CacheFormatError: on bad magic, unsupported version/dtype, oversized shape, truncated payload or CRC mismatch.
    """
    if len(data) < _PREFIX.size:
        raise CacheFormatError(f'{source}: truncated header')
    magic, version, ndim = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CacheFormatError(f'{source}: bad magic {magic!r}')
    if version != VERSION:
        raise CacheFormatError(f'{source}: unsupported version {version}')
    if not 1 <= ndim <= MAX_NDIM or (expected_ndim is not None and ndim != expected_ndim):
        raise CacheFormatError(f'{source}: unexpected number of dimensions {ndim}')
    offset = _PREFIX.size
    if len(data) < offset + 4 * ndim + 1:
        raise CacheFormatError(f'{source}: truncated header')
    dims = struct.unpack_from(f'<{ndim}I', data, offset)
    offset += 4 * ndim
    (dtype,) = struct.unpack_from('<B', data, offset)
    offset += 1
    if dtype != DTYPE_F32:
        raise CacheFormatError(f'{source}: unsupported dtype code {dtype}')
    n_elements = int(np.prod(dims, dtype=np.int64))
    if n_elements > MAX_ELEMENTS:
        raise CacheFormatError(f'{source}: shape {dims} overflows the size limit')
    payload_size = 4 * n_elements
    if len(data) < offset + payload_size + _CRC.size:
        raise CacheFormatError(f'{source}: truncated payload, header claims shape {dims}')
    if len(data) > offset + payload_size + _CRC.size:
        raise CacheFormatError(f'{source}: trailing bytes after checksum')
    payload = data[offset:offset + payload_size]
    (crc,) = _CRC.unpack_from(data, offset + payload_size)
    if crc != zlib.crc32(payload):
        raise CacheFormatError(f'{source}: checksum mismatch')
    return np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(dims).astype(np.float32)


def write_tensor(path: str, array: np.ndarray):
    dirname = os.path.dirname(path)
    if dirname and not os.path.isdir(dirname):
        os.makedirs(dirname)
    with open(path, 'wb') as f:
        f.write(encode_tensor(array))


def read_tensor(path: str, expected_ndim: int = None) -> np.ndarray:
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise CacheFormatError(f'unable to read {path}: {e}') from e
    return decode_tensor(data, source=path, expected_ndim=expected_ndim)


def is_valid_tensor_file(path: str, expected_ndim: int = None) -> bool:
    if not os.path.isfile(path):
        return False
    try:
        read_tensor(path, expected_ndim=expected_ndim)
    except CacheFormatError:
        return False
    return True
