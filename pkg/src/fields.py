"""
Codec de campos de verdade-terreno.

Converte anotações (ponto + ângulo de aproximação) nos quatro campos densos de
regressão (C_sin, C_cos, D_sin, D_cos), no mapa de pesos W_eps da loss de
direção, na máscara da loss de ângulo e no alvo de blobs do LocNet; e decodifica
ângulos a partir dos planos sin/cos.

Convenção de coordenadas: x = coluna, y = linha, origem no canto superior
esquerdo; o centro do pixel (linha i, coluna j) fica em (x=j, y=i).
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ShapeError

logger = logging.getLogger(__name__)

NO_POINT = -1


def normalize_angle(theta: float) -> float:
    """Normaliza para (-pi, pi]."""
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    return math.pi if wrapped <= -math.pi else wrapped


@dataclass
class PointAnnotation:
    x: float
    y: float
    theta: float
    visible: bool = True

    def __post_init__(self):
        self.x = float(self.x)
        self.y = float(self.y)
        self.theta = normalize_angle(float(self.theta))
        self.visible = bool(self.visible)

    def inside(self, height: int, width: int) -> bool:
        return 0 <= self.x < width and 0 <= self.y < height


@dataclass
class GraspDetection:
    """Ponto de preensão previsto; theta é NaN quando o ângulo é indefinido ou não foi regredido."""
    x: float
    y: float
    theta: float
    score: float

    @property
    def has_angle(self) -> bool:
        return not math.isnan(self.theta)

    def to_json(self) -> dict:
        return {
            "x": float(self.x),
            "y": float(self.y),
            "theta_deg": round(math.degrees(self.theta), 6) if self.has_angle else None,
            "score": float(self.score),
        }

    @classmethod
    def from_json(cls, record: dict) -> "GraspDetection":
        theta = record.get("theta_deg")
        return cls(record["x"], record["y"], math.radians(theta) if theta is not None else float("nan"),
                   record["score"])


@dataclass
class FieldStack:
    c_sin: np.ndarray
    c_cos: np.ndarray
    d_sin: Optional[np.ndarray] = None
    d_cos: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = self.c_sin.shape
        for name in ("c_cos", "d_sin", "d_cos"):
            plane = getattr(self, name)
            if plane is not None and plane.shape != shape:
                raise ShapeError("FieldStack", name, shape, plane.shape)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.c_sin.shape

    @property
    def has_angles(self) -> bool:
        return self.d_sin is not None and self.d_cos is not None


@dataclass
class WeightMap:
    w: np.ndarray
    epsilon: float


@dataclass
class AngleMask:
    m: np.ndarray
    half_extent: int = 15

    @property
    def count(self) -> int:
        return int(self.m.sum())


@dataclass
class FieldTargets:
    """Tudo o que o treino precisa por imagem."""
    fields: FieldStack
    weight: WeightMap
    mask: AngleMask
    loc_target: np.ndarray


def _visible(points: Sequence[PointAnnotation]) -> List[Tuple[int, PointAnnotation]]:
    return [(i, p) for i, p in enumerate(points) if p.visible]


def nearest_point_map(points: Sequence[PointAnnotation], H: int, W: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Índice do ponto visível mais próximo de cada pixel e a distância (px).
    Empates ficam com o menor índice; sem pontos visíveis, o mapa inteiro é NO_POINT.
    """
    visible = _visible(points)
    if not visible:
        return np.full((H, W), NO_POINT, dtype=np.int64), np.full((H, W), np.inf)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    dist = np.stack([np.hypot(xs - p.x, ys - p.y) for _, p in visible])
    # argmin devolve a primeira ocorrência: desempate pelo menor índice
    which = dist.argmin(axis=0)
    index_of = np.array([i for i, _ in visible], dtype=np.int64)
    return index_of[which], np.take_along_axis(dist, which[None], axis=0)[0]


def _displacements(points: Sequence[PointAnnotation], index: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    H, W = index.shape
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    px = np.array([p.x for p in points], dtype=np.float64)
    py = np.array([p.y for p in points], dtype=np.float64)
    safe = np.where(index == NO_POINT, 0, index)
    dx = np.where(index == NO_POINT, 0.0, px[safe] - xs) if len(points) else np.zeros((H, W))
    dy = np.where(index == NO_POINT, 0.0, py[safe] - ys) if len(points) else np.zeros((H, W))
    return dx, dy


def encode_center_directions(points: Sequence[PointAnnotation], H: int, W: int,
                             index: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    phi = atan2(m - y, n - x) para o ponto mais próximo (n, m);
    C_sin = sin(phi), C_cos = cos(phi). Pixel coincidente com o ponto recebe (0, 0).
    """
    if index is None:
        index, _ = nearest_point_map(points, H, W)
    dx, dy = _displacements(points, index)
    phi = np.arctan2(dy, dx)
    degenerate = (dx == 0) & (dy == 0)
    c_sin = np.where(degenerate, 0.0, np.sin(phi))
    c_cos = np.where(degenerate, 0.0, np.cos(phi))
    return c_sin, c_cos


def encode_approach_angles(points: Sequence[PointAnnotation], H: int, W: int,
                           index: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Cada pixel carrega (sin theta_k, cos theta_k) do ponto mais próximo k."""
    if index is None:
        index, _ = nearest_point_map(points, H, W)
    if not points or (index == NO_POINT).all():
        return np.zeros((H, W)), np.zeros((H, W))
    thetas = np.array([p.theta for p in points], dtype=np.float64)
    safe = np.where(index == NO_POINT, 0, index)
    theta_map = thetas[safe]
    valid = index != NO_POINT
    return np.where(valid, np.sin(theta_map), 0.0), np.where(valid, np.cos(theta_map), 0.0)


def compute_weight_map(points: Sequence[PointAnnotation], H: int, W: int, epsilon: float = 15.0,
                       bg_ratio: float = 1.0, index: Optional[np.ndarray] = None,
                       dist: Optional[np.ndarray] = None) -> WeightMap:
    """
    Pesos W_eps: o disco de raio eps de cada ponto visível soma 1 (pixels divididos
    igualmente); o fundo recebe bg_ratio * massa_total_do_primeiro_plano no total.

    Ponto sem disco próprio (empatado com um ponto de índice menor, ou eps menor
    que a distância ao centro de pixel mais próximo) concentra sua massa 1 no
    pixel mais próximo dele. A massa do primeiro plano é sempre o número de
    pontos visíveis.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon deve ser positivo: {epsilon}")
    if bg_ratio < 0:
        raise ValueError(f"bg_ratio não pode ser negativo: {bg_ratio}")
    visible = _visible(points)
    if not visible:
        return WeightMap(np.full((H, W), 1.0 / (H * W)), epsilon)
    if index is None or dist is None:
        index, dist = nearest_point_map(points, H, W)

    w = np.zeros((H, W), dtype=np.float64)
    foreground = (dist <= epsilon) & (index != NO_POINT)
    discs = {k: foreground & (index == k) for k, _ in visible}
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    for k, p in visible:
        disc = discs[k]
        if disc.any():
            w[disc] += 1.0 / disc.sum()
            continue
        # argmin devolve o primeiro pixel em ordem de varredura
        row, col = np.unravel_index(np.hypot(xs - p.x, ys - p.y).argmin(), (H, W))
        w[row, col] += 1.0
        foreground[row, col] = True
    fg_mass = float(len(visible))
    background = ~foreground
    n_bg = int(background.sum())
    if n_bg:
        w[background] = bg_ratio * fg_mass / n_bg
    return WeightMap(w, epsilon)


def compute_angle_mask(points: Sequence[PointAnnotation], H: int, W: int, half_extent: int = 15) -> AngleMask:
    """Quadrado de lado 2*half_extent centrado (arredondado) em cada ponto visível."""
    m = np.zeros((H, W), dtype=np.float64)
    for _, p in _visible(points):
        cx, cy = int(round(p.x)), int(round(p.y))
        r0, r1 = max(cy - half_extent, 0), min(cy + half_extent, H)
        c0, c1 = max(cx - half_extent, 0), min(cx + half_extent, W)
        if r0 < r1 and c0 < c1:
            m[r0:r1, c0:c1] = 1.0
    return AngleMask(m, half_extent)


def render_blob_target(points: Sequence[PointAnnotation], H: int, W: int, sigma: float = 2.0) -> np.ndarray:
    """Alvo do LocNet: blobs gaussianos de pico 1 centrados nos pontos visíveis."""
    target = np.zeros((H, W), dtype=np.float64)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    for _, p in _visible(points):
        blob = np.exp(-((xs - p.x) ** 2 + (ys - p.y) ** 2) / (2.0 * sigma ** 2))
        np.maximum(target, blob, out=target)
    return target


def encode_fields(points: Sequence[PointAnnotation], H: int, W: int, epsilon: float = 15.0,
                  bg_ratio: float = 1.0, half_extent: int = 15, blob_sigma: float = 2.0) -> FieldTargets:
    """Calcula de uma vez campos, pesos, máscara e alvo do LocNet."""
    index, dist = nearest_point_map(points, H, W)
    c_sin, c_cos = encode_center_directions(points, H, W, index=index)
    d_sin, d_cos = encode_approach_angles(points, H, W, index=index)
    return FieldTargets(
        fields=FieldStack(c_sin, c_cos, d_sin, d_cos),
        weight=compute_weight_map(points, H, W, epsilon, bg_ratio, index=index, dist=dist),
        mask=compute_angle_mask(points, H, W, half_extent),
        loc_target=render_blob_target(points, H, W, blob_sigma),
    )


def decode_angle(s: float, c: float) -> float:
    """atan2(s, c) em (-pi, pi]; (0, 0) devolve NaN (ângulo indefinido)."""
    if s == 0 and c == 0:
        return float("nan")
    theta = math.atan2(s, c)
    return math.pi if theta <= -math.pi else theta


def decode_angle_field(s: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Versão vetorizada de decode_angle."""
    theta = np.arctan2(s, c)
    theta = np.where(theta <= -np.pi, np.pi, theta)
    return np.where((s == 0) & (c == 0), np.nan, theta)
