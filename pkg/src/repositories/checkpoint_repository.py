import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.core.errors import CheckpointError, DataIOError

logger = logging.getLogger(__name__)

MAGIC = b"CDN3"
VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointRepository:
    """
    Camada de acesso a checkpoints no formato CDN3.

    Layout: magic 'CDN3' + byte de versão + sequência de registros
    (u16 tamanho do nome, nome utf-8, u8 tag de dtype, u8 ndim, u32 dims...,
    payload float little-endian) até o fim do arquivo.
    """

    @staticmethod
    def encode(tensors: Dict[str, np.ndarray]) -> bytes:
        chunks = [MAGIC, struct.pack("<B", VERSION)]
        for name, array in tensors.items():
            arr = np.asarray(array)
            dtype = arr.dtype.newbyteorder("<")
            if dtype not in _DTYPE_TAGS:
                raise CheckpointError(f"dtype não suportado em '{name}': {arr.dtype}")
            raw_name = name.encode("utf-8")
            chunks.append(struct.pack("<H", len(raw_name)))
            chunks.append(raw_name)
            chunks.append(struct.pack("<BB", _DTYPE_TAGS[dtype], arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        return b"".join(chunks)

    @staticmethod
    def decode(payload: bytes) -> "OrderedDict[str, np.ndarray]":
        if payload[:4] != MAGIC:
            raise CheckpointError("Arquivo não é um checkpoint CDN3 (magic inválido).")
        if len(payload) < 5 or payload[4] != VERSION:
            raise CheckpointError(f"Versão de checkpoint incompatível: {payload[4] if len(payload) > 4 else None}")
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        pos = 5
        try:
            while pos < len(payload):
                (name_len,) = struct.unpack_from("<H", payload, pos)
                pos += 2
                name = payload[pos:pos + name_len].decode("utf-8")
                pos += name_len
                tag, ndim = struct.unpack_from("<BB", payload, pos)
                pos += 2
                dims = struct.unpack_from(f"<{ndim}I", payload, pos)
                pos += 4 * ndim
                dtype = _TAG_DTYPES[tag]
                count = int(np.prod(dims)) if ndim else 1
                nbytes = count * dtype.itemsize
                if pos + nbytes > len(payload):
                    raise CheckpointError(f"Checkpoint truncado no tensor '{name}'.")
                out[name] = np.frombuffer(payload, dtype=dtype, count=count, offset=pos).reshape(dims).copy()
                pos += nbytes
        except (struct.error, KeyError, UnicodeDecodeError) as e:
            raise CheckpointError(f"Checkpoint corrompido: {e}") from e
        return out

    @staticmethod
    def save(path: Union[str, Path], tensors: Dict[str, np.ndarray]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(CheckpointRepository.encode(tensors))
        except OSError as e:
            raise DataIOError(f"Falha ao gravar checkpoint {path}: {e}") from e
        logger.info(f"Checkpoint salvo: {path} ({len(tensors)} tensores)")
        return path

    @staticmethod
    def load(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
        path = Path(path)
        if not path.exists():
            raise DataIOError(f"Checkpoint não encontrado: {path}")
        return CheckpointRepository.decode(path.read_bytes())
