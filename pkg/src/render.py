import logging
import math
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots
from PIL import Image, ImageDraw

from src.core.errors import DataIOError
from src.fields import GraspDetection, PointAnnotation

logger = logging.getLogger(__name__)

PRED_COLOR = (20, 30, 120)
GT_COLOR = (235, 235, 235)
HIDDEN_GT_COLOR = (150, 150, 150)


def _ray(draw: ImageDraw.ImageDraw, x: float, y: float, theta: float, length: float, color, width: int) -> None:
    draw.line([(x, y), (x + length * math.cos(theta), y + length * math.sin(theta))], fill=color, width=width)


def render_overlay(image: np.ndarray, detections: Sequence[GraspDetection], path: Union[str, Path],
                   gts: Optional[Sequence[PointAnnotation]] = None, ray_length: float = 14.0) -> Path:
    """
    Sobreposição em PNG: raios claros para o ângulo anotado, cruz e raio escuros
    para cada detecção (sem raio quando o ângulo é indefinido).
    """
    rgb = np.clip(np.rint(np.transpose(image[:3], (1, 2, 0)) * 255.0), 0, 255).astype(np.uint8)
    canvas = Image.fromarray(rgb)
    draw = ImageDraw.Draw(canvas)
    for gt in gts or []:
        color = GT_COLOR if gt.visible else HIDDEN_GT_COLOR
        _ray(draw, gt.x, gt.y, gt.theta, ray_length, color, 2)
        draw.ellipse([gt.x - 2, gt.y - 2, gt.x + 2, gt.y + 2], outline=color)
    for det in detections:
        draw.line([(det.x - 3, det.y), (det.x + 3, det.y)], fill=PRED_COLOR, width=1)
        draw.line([(det.x, det.y - 3), (det.x, det.y + 3)], fill=PRED_COLOR, width=1)
        if det.has_angle:
            _ray(draw, det.x, det.y, det.theta, ray_length, PRED_COLOR, 1)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        canvas.save(path, format="PNG")
    except OSError as e:
        raise DataIOError(f"Falha ao gravar sobreposição {path}: {e}") from e
    return path


def render_training_curves(metrics: pd.DataFrame, path: Union[str, Path]) -> Optional[Path]:
    """Curvas de loss e de log-variância por época (HTML do plotly)."""
    if metrics.empty:
        return None
    fig = make_subplots(rows=1, cols=2, subplot_titles=("Losses", "Incerteza (s = log sigma^2)"))
    step = np.arange(1, len(metrics) + 1)
    for col in ("l_phi", "l_theta", "val_l_phi", "val_l_theta"):
        if col in metrics and metrics[col].notna().any():
            dash = "dot" if col.startswith("val_") else None
            fig.add_trace(go.Scatter(x=step, y=metrics[col], mode="lines+markers", name=col,
                                     line=dict(dash=dash)), row=1, col=1)
    for col in ("s_phi", "s_theta"):
        fig.add_trace(go.Scatter(x=step, y=metrics[col], mode="lines", name=col), row=1, col=2)
    labels = [f"{p}:{e}" for p, e in zip(metrics["phase"], metrics["epoch"])]
    fig.update_xaxes(tickmode="array", tickvals=step, ticktext=labels)
    fig.update_layout(template="plotly_white", height=420, margin=dict(l=20, r=20, t=50, b=20))
    path = Path(path)
    try:
        fig.write_html(str(path), include_plotlyjs="cdn", div_id="training-curves")
    except OSError as e:
        raise DataIOError(f"Falha ao gravar curvas de treino {path}: {e}") from e
    return path
