import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from src.core.errors import DataIOError, SchemaError
from src.fields import PointAnnotation
from src.utils import DomainValidators

logger = logging.getLogger(__name__)

ANNOTATIONS_FILE = "annotations.json"
DEPTH_SUFFIX = "_depth.png"
DEPTH_SCALE = 65535.0


@dataclass
class DatasetSample:
    """Imagem carregada (C x H x W, float32 em [0,1]) com suas anotações."""
    name: str
    image: np.ndarray
    points: List[PointAnnotation]
    tags: Dict[str, str] = field(default_factory=dict)
    split: Optional[str] = None
    original_size: Optional[Tuple[int, int]] = None

    @property
    def height(self) -> int:
        return int(self.image.shape[1])

    @property
    def width(self) -> int:
        return int(self.image.shape[2])


def depth_filename(image_name: str) -> str:
    path = Path(image_name)
    return path.with_name(f"{path.stem}{DEPTH_SUFFIX}").as_posix()


def points_from_record(record: Dict[str, Any]) -> List[PointAnnotation]:
    return [
        PointAnnotation(p["x"], p["y"], math.radians(p["theta_deg"]), p.get("visible", True))
        for p in record["points"]
    ]


def points_to_json(points: Sequence[PointAnnotation]) -> List[Dict[str, Any]]:
    return [
        {"x": round(p.x, 4), "y": round(p.y, 4), "theta_deg": round(math.degrees(p.theta), 6), "visible": p.visible}
        for p in points
    ]


def _rescale_points(points: Sequence[PointAnnotation], sx: float, sy: float) -> List[PointAnnotation]:
    # Centros de pixel em coordenadas inteiras; o ângulo acompanha a escala anisotrópica
    return [
        PointAnnotation(
            (p.x + 0.5) * sx - 0.5,
            (p.y + 0.5) * sy - 0.5,
            math.atan2(math.sin(p.theta) * sy, math.cos(p.theta) * sx),
            p.visible,
        )
        for p in points
    ]


class DatasetRepository:
    """
    Acesso aos arquivos do dataset: annotations.json, PNGs RGB de 8 bits,
    profundidade em PNG de 16 bits (valor / 65535 em [0,1]) e registros de predição.
    """

    def __init__(self, root: Union[str, Path], annotations: Optional[Union[str, Path]] = None):
        self.root = Path(root)
        self.annotations_path = Path(annotations) if annotations else self.root / ANNOTATIONS_FILE

    # --- Anotações ---

    @staticmethod
    def load_annotations(path: Union[str, Path]) -> List[Dict[str, Any]]:
        path = Path(path)
        if not path.exists():
            raise DataIOError(f"Arquivo de anotações não encontrado: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"Anotações não são JSON válido ({path}): {e}") from e
        if not isinstance(raw, list):
            raise SchemaError(f"Anotações devem ser uma lista de registros: {path}")
        return [DomainValidators.validate_annotation_record(r, i) for i, r in enumerate(raw)]

    @staticmethod
    def save_annotations(path: Union[str, Path], records: List[Dict[str, Any]]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(records, f, indent=2, sort_keys=True)
                f.write("\n")
        except OSError as e:
            raise DataIOError(f"Falha ao gravar anotações {path}: {e}") from e
        return path

    # --- Imagens ---

    @staticmethod
    def write_rgb(path: Union[str, Path], rgb: np.ndarray) -> None:
        """rgb: 3 x H x W em [0,1]."""
        pixels = np.clip(np.rint(np.transpose(rgb, (1, 2, 0)) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(path, format="PNG")

    @staticmethod
    def write_depth(path: Union[str, Path], depth: np.ndarray) -> None:
        """depth: H x W em [0,1], gravado como PNG de 16 bits."""
        values = np.clip(np.rint(depth * DEPTH_SCALE), 0, DEPTH_SCALE).astype(np.uint16)
        Image.fromarray(values).save(path, format="PNG")

    @staticmethod
    def read_rgb(path: Path, size: Optional[Tuple[int, int]] = None) -> np.ndarray:
        try:
            with Image.open(path) as img:
                img = img.convert("RGB")
                if size is not None and img.size != size:
                    img = img.resize(size, Image.BILINEAR)
                arr = np.asarray(img, dtype=np.float32) / 255.0
        except (OSError, ValueError) as e:
            raise DataIOError(f"Falha ao ler imagem {path}: {e}") from e
        return np.ascontiguousarray(np.transpose(arr, (2, 0, 1)))

    @staticmethod
    def read_depth(path: Path, size: Optional[Tuple[int, int]] = None) -> np.ndarray:
        try:
            with Image.open(path) as img:
                arr = np.asarray(img).astype(np.float32) / DEPTH_SCALE
            if size is not None and (arr.shape[1], arr.shape[0]) != size:
                arr = np.asarray(Image.fromarray(arr).resize(size, Image.BILINEAR), dtype=np.float32)
        except (OSError, ValueError) as e:
            raise DataIOError(f"Falha ao ler profundidade {path}: {e}") from e
        return np.clip(arr, 0.0, 1.0)

    def load_sample(self, record: Dict[str, Any], use_depth: bool = False,
                    image_size: Optional[int] = None) -> DatasetSample:
        image_path = self.root / record["image"]
        if not image_path.exists():
            raise DataIOError(f"Imagem não encontrada: {image_path}")
        with Image.open(image_path) as img:
            width, height = img.size
        size = (image_size, image_size) if image_size else None

        channels = [self.read_rgb(image_path, size)]
        if use_depth:
            depth_path = self.root / depth_filename(record["image"])
            if not depth_path.exists():
                raise DataIOError(f"Profundidade não encontrada para {record['image']}: {depth_path}")
            channels.append(self.read_depth(depth_path, size)[None])
        image = np.concatenate(channels, axis=0).astype(np.float32)

        points = points_from_record(record)
        if size is not None and (width, height) != size:
            points = _rescale_points(points, image_size / width, image_size / height)
        return DatasetSample(record["image"], image, points, dict(record.get("tags", {})), record.get("split"),
                             (width, height))

    def load(self, split: Optional[str] = None, use_depth: bool = False,
             image_size: Optional[int] = None) -> List[DatasetSample]:
        records = self.load_annotations(self.annotations_path)
        if split is not None:
            records = [r for r in records if r.get("split", split) == split]
        samples = [self.load_sample(r, use_depth, image_size) for r in records]
        logger.info(f"{len(samples)} amostras carregadas de {self.root} (split={split or 'todos'})")
        return samples

    # --- Predições ---

    @staticmethod
    def save_predictions(path: Union[str, Path], records: List[Dict[str, Any]]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(records, f, indent=2, sort_keys=True, allow_nan=False)
                f.write("\n")
        except OSError as e:
            raise DataIOError(f"Falha ao gravar predições {path}: {e}") from e
        return path

    @staticmethod
    def load_predictions(path: Union[str, Path]) -> Dict[str, List[Dict[str, Any]]]:
        """Devolve {imagem: [detecções]} validadas."""
        path = Path(path)
        if not path.exists():
            raise DataIOError(f"Arquivo de predições não encontrado: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"Predições não são JSON válido ({path}): {e}") from e
        if not isinstance(raw, list):
            raise SchemaError("Predições devem ser uma lista de registros.")
        out: Dict[str, List[Dict[str, Any]]] = {}
        for i, rec in enumerate(raw):
            if not isinstance(rec, dict) or not isinstance(rec.get("image"), str):
                raise SchemaError(f"predição {i}: campo 'image' ausente")
            dets = rec.get("detections")
            if not isinstance(dets, list):
                raise SchemaError(f"predição {i}: campo 'detections' deve ser uma lista")
            out[rec["image"]] = [DomainValidators.validate_detection(d, f"predição {i}, detecção {j}")
                                 for j, d in enumerate(dets)]
        return out

    def has_depth(self) -> bool:
        """
        Verdadeiro quando todo registro tem o PNG de profundidade paralelo; falso
        quando nenhum tem. Dataset misto é SchemaError.
        """
        records = self.load_annotations(self.annotations_path)
        present = [(self.root / depth_filename(r["image"])).exists() for r in records]
        if any(present) and not all(present):
            missing = [r["image"] for r, ok in zip(records, present) if not ok]
            raise SchemaError(f"Profundidade presente em parte do dataset; ausente em {len(missing)} imagem(ns), "
                              f"ex.: {missing[0]}")
        return bool(records) and all(present)
