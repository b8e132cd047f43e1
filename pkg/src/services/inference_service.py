import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.ndimage import maximum_filter

from src.core.config import write_snapshot
from src.core.errors import GraspError
from src.core.result import Result
from src.fields import GraspDetection, decode_angle
from src.models import DenseRegNet, LocNet, forward_regression, load_checkpoint
from src.numcore import Tensor
from src.render import render_overlay
from src.repositories.dataset_repository import DatasetRepository, DatasetSample

logger = logging.getLogger(__name__)

PREDICTIONS_FILE = "predictions.json"


@dataclass
class InferenceParams:
    threshold: float = 0.4
    nms_window: int = 5
    angle_window: int = 3

    def validate(self) -> None:
        if self.nms_window < 1 or self.nms_window % 2 == 0:
            raise ValueError(f"nms_window deve ser ímpar e positivo: {self.nms_window}")
        if self.angle_window < 1:
            raise ValueError(f"angle_window deve ser positivo: {self.angle_window}")


def localize(o_cent: np.ndarray, threshold: float = 0.4, nms_window: int = 5) -> List[Tuple[int, int, float]]:
    """
    Máximos locais de `o_cent` na vizinhança nms_window x nms_window com valor
    >= threshold, como (x, y, score) em ordem decrescente de score. Em platôs
    (máximos locais vizinhos de mesmo valor) fica apenas o primeiro na ordem de
    varredura.
    """
    if nms_window < 1 or nms_window % 2 == 0:
        raise ValueError(f"nms_window deve ser ímpar e positivo: {nms_window}")
    o = np.asarray(o_cent)
    H, W = o.shape
    peak = maximum_filter(o, size=nms_window, mode="constant", cval=-np.inf)
    is_max = o == peak
    ys, xs = np.nonzero(is_max & (o >= threshold))
    r = nms_window // 2
    found = []
    for y, x in zip(ys, xs):
        v = o[y, x]
        r0, c0 = max(y - r, 0), max(x - r, 0)
        rows, cols = slice(r0, min(y + r + 1, H)), slice(c0, min(x + r + 1, W))
        window = o[rows, cols]
        # só empates que também são máximos locais disputam o platô
        first = np.flatnonzero((window == v) & is_max[rows, cols])[0]
        if (r0 + first // window.shape[1], c0 + first % window.shape[1]) == (y, x):
            found.append((int(x), int(y), float(v)))
    # Estável: empates de score mantêm a ordem de varredura
    found.sort(key=lambda d: -d[2])
    return found


def read_angle_at(d_sin: np.ndarray, d_cos: np.ndarray, x: int, y: int, window: int = 3) -> float:
    """Média vetorial de (d_sin, d_cos) na janela (recortada nas bordas) decodificada por atan2."""
    H, W = d_sin.shape
    if not (0 <= x < W and 0 <= y < H):
        raise ValueError(f"Posição fora da imagem: ({x}, {y})")
    r = window // 2
    rows = slice(max(y - r, 0), min(y - r + window, H))
    cols = slice(max(x - r, 0), min(x - r + window, W))
    s = float(np.mean(d_sin[rows, cols]))
    c = float(np.mean(d_cos[rows, cols]))
    if math.hypot(s, c) < 1e-6:
        return float("nan")
    return decode_angle(s, c)


def predict_grasps(image: np.ndarray, reg_model: DenseRegNet, loc_model: LocNet,
                   params: Optional[InferenceParams] = None) -> List[GraspDetection]:
    """Regressão -> LocNet sobre (C_sin, C_cos) -> picos -> ângulo em cada pico."""
    params = params or InferenceParams()
    params.validate()
    fields = forward_regression(reg_model, image)
    direction = np.stack([fields.c_sin, fields.c_cos])[None]
    o_cent = loc_model(Tensor(direction)).data[0, 0].astype(np.float64)
    detections = []
    for x, y, score in localize(o_cent, params.threshold, params.nms_window):
        theta = read_angle_at(fields.d_sin, fields.d_cos, x, y, params.angle_window) \
            if fields.has_angles else float("nan")
        detections.append(GraspDetection(float(x), float(y), theta, score))
    return detections


def _to_original_frame(det: GraspDetection, sample: DatasetSample) -> GraspDetection:
    if sample.original_size is None or sample.original_size == (sample.width, sample.height):
        return det
    sx = sample.original_size[0] / sample.width
    sy = sample.original_size[1] / sample.height
    theta = math.atan2(math.sin(det.theta) * sy, math.cos(det.theta) * sx) if det.has_angle else det.theta
    return GraspDetection((det.x + 0.5) * sx - 0.5, (det.y + 0.5) * sy - 0.5, theta, det.score)


class InferenceService:
    """
    Caso de uso 'infer': carrega os dois checkpoints, prediz cada imagem do
    dataset e grava predictions.json (e sobreposições opcionais).
    """

    def __init__(self, reg_checkpoint: Union[str, Path], loc_checkpoint: Union[str, Path],
                 params: Optional[InferenceParams] = None, threads: int = 1):
        self.reg_checkpoint = Path(reg_checkpoint)
        self.loc_checkpoint = Path(loc_checkpoint)
        self.params = params or InferenceParams()
        self.threads = threads

    def run(self, data_dir: Union[str, Path], out_dir: Union[str, Path], split: Optional[str] = None,
            rgb_only: bool = False, image_size: Optional[int] = None, overlays: bool = False) -> Result[Path]:
        try:
            self.params.validate()
            reg_model, _ = load_checkpoint(self.reg_checkpoint, expected_kind="dense_reg_net")
            loc_model, _ = load_checkpoint(self.loc_checkpoint, expected_kind="loc_net")
            repo = DatasetRepository(data_dir)
            use_depth = (not rgb_only) and repo.has_depth()
            samples = repo.load(split=split, use_depth=use_depth, image_size=image_size)

            def predict(sample: DatasetSample) -> List[GraspDetection]:
                return predict_grasps(sample.image, reg_model, loc_model, self.params)

            if self.threads > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    all_dets = list(pool.map(predict, samples))
            else:
                all_dets = [predict(s) for s in samples]

            out = Path(out_dir)
            records: List[Dict] = []
            for sample, dets in zip(samples, all_dets):
                if overlays:
                    name = Path(sample.name).stem + "_overlay.png"
                    render_overlay(sample.image, dets, out / "overlays" / name, gts=sample.points)
                records.append({
                    "image": sample.name,
                    "detections": [_to_original_frame(d, sample).to_json() for d in dets],
                })
            path = DatasetRepository.save_predictions(out / PREDICTIONS_FILE, records)
            write_snapshot(out, "infer", {
                "reg_checkpoint": self.reg_checkpoint, "loc_checkpoint": self.loc_checkpoint,
                "params": self.params, "data": str(data_dir), "split": split, "rgb_only": rgb_only,
                "use_depth": use_depth, "image_size": image_size, "overlays": overlays,
            })
            total = sum(len(d) for d in all_dets)
            logger.info(f"Inferência: {len(samples)} imagens, {total} detecções -> {path}")
            return Result.success(path)
        except GraspError as e:
            logger.error(f"Falha na inferência: {e}")
            return Result.from_exception(e)
        except ValueError as e:
            logger.error(f"Parâmetro inválido na inferência: {e}")
            return Result.failure(str(e), exit_code=2)
