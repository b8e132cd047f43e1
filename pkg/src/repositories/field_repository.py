import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.core.errors import DataIOError, SchemaError
from src.fields import AngleMask, FieldStack, FieldTargets, WeightMap

logger = logging.getLogger(__name__)

MAGIC = b"CDF1"
PLANE_ORDER = ("c_sin", "c_cos", "d_sin", "d_cos", "weight", "angle_mask", "loc_target")


class FieldRepository:
    """
    Dumps de campos no formato CDF1: magic, H, W, número de planos (u32),
    tabela de nomes (u16 + utf-8) e planos float32 little-endian em ordem de linha.
    """

    @staticmethod
    def encode(planes: Dict[str, np.ndarray]) -> bytes:
        if not planes:
            raise SchemaError("Dump CDF1 precisa de ao menos um plano.")
        shapes = {p.shape for p in planes.values()}
        if len(shapes) != 1:
            raise SchemaError(f"Planos com dimensões diferentes: {shapes}")
        (H, W), = shapes
        chunks = [MAGIC, struct.pack("<III", H, W, len(planes))]
        for name in planes:
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<H", len(raw)) + raw)
        for plane in planes.values():
            chunks.append(np.ascontiguousarray(plane, dtype="<f4").tobytes())
        return b"".join(chunks)

    @staticmethod
    def decode(payload: bytes) -> "OrderedDict[str, np.ndarray]":
        if payload[:4] != MAGIC:
            raise SchemaError("Arquivo não é um dump CDF1.")
        try:
            H, W, count = struct.unpack_from("<III", payload, 4)
            pos = 16
            names = []
            for _ in range(count):
                (n,) = struct.unpack_from("<H", payload, pos)
                names.append(payload[pos + 2:pos + 2 + n].decode("utf-8"))
                pos += 2 + n
        except (struct.error, UnicodeDecodeError) as e:
            raise SchemaError(f"Cabeçalho CDF1 corrompido: {e}") from e
        expected = pos + count * H * W * 4
        if len(payload) != expected:
            raise SchemaError(f"Tamanho CDF1 inconsistente: {len(payload)} != {expected}")
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name in names:
            out[name] = np.frombuffer(payload, dtype="<f4", count=H * W, offset=pos).reshape(H, W).copy()
            pos += H * W * 4
        return out

    @staticmethod
    def planes_from_targets(targets: FieldTargets) -> "OrderedDict[str, np.ndarray]":
        f = targets.fields
        return OrderedDict([
            ("c_sin", f.c_sin), ("c_cos", f.c_cos), ("d_sin", f.d_sin), ("d_cos", f.d_cos),
            ("weight", targets.weight.w), ("angle_mask", targets.mask.m), ("loc_target", targets.loc_target),
        ])

    @staticmethod
    def targets_from_planes(planes: Dict[str, np.ndarray], epsilon: float, half_extent: int) -> FieldTargets:
        missing = [name for name in PLANE_ORDER if name not in planes]
        if missing:
            raise SchemaError(f"Dump CDF1 sem planos obrigatórios: {missing}")
        to64 = {k: v.astype(np.float64) for k, v in planes.items()}
        return FieldTargets(
            fields=FieldStack(to64["c_sin"], to64["c_cos"], to64["d_sin"], to64["d_cos"]),
            weight=WeightMap(to64["weight"], epsilon),
            mask=AngleMask(to64["angle_mask"], half_extent),
            loc_target=to64["loc_target"],
        )

    @staticmethod
    def save(path: Union[str, Path], targets: FieldTargets) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(FieldRepository.encode(FieldRepository.planes_from_targets(targets)))
        except OSError as e:
            raise DataIOError(f"Falha ao gravar campos {path}: {e}") from e
        return path

    @staticmethod
    def load(path: Union[str, Path], epsilon: float = 15.0, half_extent: int = 15) -> FieldTargets:
        path = Path(path)
        if not path.exists():
            raise DataIOError(f"Dump de campos não encontrado: {path}")
        return FieldRepository.targets_from_planes(FieldRepository.decode(path.read_bytes()), epsilon, half_extent)
