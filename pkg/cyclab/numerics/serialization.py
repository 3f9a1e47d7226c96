"""
CMLT tensor records.

A record is: magic b"CMLT", version u32, rank u32, extents u64[rank], dtype tag u32, then the
little-endian scalars in row-major order. A record file is a sequence of (name length u32, utf-8 name,
record). An artifact is a directory holding manifest.json and tensors.cmlt.
"""
import os
import struct
import numpy as np
import torch
from torch import Tensor
from typing import Any, Dict, Tuple
from ..utils import ArtifactError, save_json, load_json


__all__ = [
    'MAGIC', 'FORMAT_VERSION', 'encode_tensor', 'decode_tensor', 'save_tensor', 'load_tensor',
    'save_tensors', 'load_tensors', 'save_artifact', 'load_artifact', 'MANIFEST_NAME', 'TENSORS_NAME'
]


MAGIC = b"CMLT"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
TENSORS_NAME = "tensors.cmlt"

_DTYPES = {
    0: (torch.float32, np.dtype('<f4')),
    1: (torch.float64, np.dtype('<f8')),
    2: (torch.int64, np.dtype('<i8')),
}
_TAGS = {torch_dtype: tag for tag, (torch_dtype, _) in _DTYPES.items()}


def encode_tensor(tensor: Tensor) -> bytes:
    tensor = tensor.detach().cpu().contiguous()
    if tensor.dtype not in _TAGS:
        tensor = tensor.to(torch.float32)
    tag = _TAGS[tensor.dtype]
    header = MAGIC + struct.pack('<II', FORMAT_VERSION, tensor.dim())
    header += struct.pack('<' + 'Q' * tensor.dim(), *tensor.shape)
    header += struct.pack('<I', tag)
    return header + tensor.numpy().astype(_DTYPES[tag][1], copy=False).tobytes(order='C')


def decode_tensor(buffer: bytes, offset: int=0, path: str=None) -> Tuple[Tensor, int]:
    """
    Decode one record starting at offset

    :return: the tensor and the offset right after the record
    """
    if buffer[offset:offset + 4] != MAGIC:
        raise ArtifactError("bad magic bytes", path, offset)
    if len(buffer) < offset + 12:
        raise ArtifactError("truncated header", path, offset)
    version, rank = struct.unpack_from('<II', buffer, offset + 4)
    if version != FORMAT_VERSION:
        raise ArtifactError("unsupported format version " + str(version), path, offset + 4)
    cursor = offset + 12
    if len(buffer) < cursor + 8 * rank + 4:
        raise ArtifactError("truncated extents", path, cursor)
    shape = struct.unpack_from('<' + 'Q' * rank, buffer, cursor)
    cursor += 8 * rank
    tag, = struct.unpack_from('<I', buffer, cursor)
    if tag not in _DTYPES:
        raise ArtifactError("unknown dtype tag " + str(tag), path, cursor)
    cursor += 4
    np_dtype = _DTYPES[tag][1]
    count = int(np.prod(shape)) if rank > 0 else 1
    end = cursor + count * np_dtype.itemsize
    if len(buffer) < end:
        raise ArtifactError("truncated data: expected " + str(count) + " scalars", path, cursor)
    array = np.frombuffer(buffer, dtype=np_dtype, count=count, offset=cursor).reshape(shape)
    return torch.from_numpy(array.copy()), end


def save_tensor(tensor: Tensor, path: str):
    with open(path, 'wb') as f:
        f.write(encode_tensor(tensor))


def load_tensor(path: str) -> Tensor:
    with open(path, 'rb') as f:
        buffer = f.read()
    tensor, end = decode_tensor(buffer, 0, path)
    if end != len(buffer):
        raise ArtifactError("trailing bytes after record", path, end)
    return tensor


def save_tensors(tensors: Dict[str, Tensor], path: str):
    """Write named records, in sorted name order"""
    with open(path, 'wb') as f:
        for name in sorted(tensors):
            encoded = name.encode('utf-8')
            f.write(struct.pack('<I', len(encoded)))
            f.write(encoded)
            f.write(encode_tensor(tensors[name]))


def load_tensors(path: str) -> Dict[str, Tensor]:
    with open(path, 'rb') as f:
        buffer = f.read()
    tensors = {}
    cursor = 0
    while cursor < len(buffer):
        if len(buffer) < cursor + 4:
            raise ArtifactError("truncated record name", path, cursor)
        length, = struct.unpack_from('<I', buffer, cursor)
        cursor += 4
        if len(buffer) < cursor + length:
            raise ArtifactError("truncated record name", path, cursor)
        try:
            name = buffer[cursor:cursor + length].decode('utf-8')
        except UnicodeDecodeError:
            raise ArtifactError("record name is not utf-8", path, cursor)
        cursor += length
        tensors[name], cursor = decode_tensor(buffer, cursor, path)
    return tensors


def save_artifact(directory: str, manifest: Dict[str, Any], tensors: Dict[str, Tensor]):
    os.makedirs(directory, exist_ok=True)
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["tensors"] = sorted(tensors)
    save_json(manifest, os.path.join(directory, MANIFEST_NAME))
    save_tensors(tensors, os.path.join(directory, TENSORS_NAME))


def load_artifact(directory: str) -> Tuple[Dict[str, Any], Dict[str, Tensor]]:
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ArtifactError("missing manifest", manifest_path)
    manifest = load_json(manifest_path)
    tensors = load_tensors(os.path.join(directory, TENSORS_NAME))
    missing = set(manifest.get("tensors", [])) - set(tensors)
    if missing:
        raise ArtifactError("manifest lists missing tensors " + str(sorted(missing)), directory)
    return manifest, tensors
