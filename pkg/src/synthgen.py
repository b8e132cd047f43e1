"""
Gerador procedural 2-D de cenas com "toalhas".

Cada cena: textura de fundo + gradiente de iluminação, um quadrilátero
(rotação, perspectiva e ondulação senoidal) opcionalmente dobrado ao meio ou em
quatro, retângulos de desordem que podem ocultar cantos e, opcionalmente, um
canal de profundidade. Cada canto visível recebe theta = direção da bissetriz
externa das duas arestas adjacentes (45 graus para fora em cantos retos).
"""
import hashlib
import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter

from src.core.config import config_hash, write_json
from src.core.errors import DataIOError, GraspError
from src.fields import PointAnnotation
from src.repositories.dataset_repository import (ANNOTATIONS_FILE, DatasetRepository, depth_filename,
                                                 points_to_json)

logger = logging.getLogger(__name__)

TEXTURE_FAMILIES = ("checker", "stripes", "noise", "flat")

# Desordem (oclusores)
CLUTTER_MIN, CLUTTER_MAX = 1, 3
CLUTTER_SIZE_RANGE = (0.08, 0.2)     # fração do menor lado da imagem
CLUTTER_NEAR_CORNER_PROB = 0.5

EDGE_SAMPLES = 32
MAX_RETRIES = 25


@dataclass
class SceneConfig:
    height: int = 128
    width: int = 128
    towel_size: Tuple[float, float] = (0.25, 0.6)
    warp_amplitude: float = 3.0
    perspective: float = 0.12
    fold_prob: float = 0.3
    clutter_prob: float = 0.35
    textures: Tuple[str, ...] = TEXTURE_FAMILIES
    lighting_range: Tuple[float, float] = (0.0, 0.5)
    depth_enabled: bool = False
    seed: int = 0

    def validate(self) -> None:
        for name in ("fold_prob", "clutter_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} fora de [0, 1]: {value}")
        lo, hi = self.towel_size
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"towel_size inválido: {self.towel_size}")
        unknown = [t for t in self.textures if t not in TEXTURE_FAMILIES]
        if unknown or not self.textures:
            raise ValueError(f"Famílias de textura inválidas: {unknown or 'nenhuma'}")
        if self.height < 16 or self.width < 16:
            raise ValueError("Imagem sintética precisa de ao menos 16x16 px.")


@dataclass
class Scene:
    """Imagem C x H x W em [0,1], anotações de cantos, tags e o contorno visível da toalha."""
    image: np.ndarray
    points: List[PointAnnotation]
    tags: Dict[str, str]
    outline: np.ndarray = field(repr=False, default=None)
    clutter: List[Tuple[float, float, float, float]] = field(default_factory=list)

    def __iter__(self):
        return iter((self.image, self.points, self.tags))


# ---------------------------------------------------------------------------
#  Texturas e iluminação
# ---------------------------------------------------------------------------

def _two_colors(rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    a = rng.uniform(0.1, 0.9, size=3)
    b = np.clip(a + rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 0.45, size=3), 0.0, 1.0)
    return a, b


def render_texture(kind: str, rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    """Textura 3 x H x W em [0,1]."""
    a, b = _two_colors(rng)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    angle = rng.uniform(0.0, math.pi)
    u = xs * math.cos(angle) + ys * math.sin(angle)
    v = -xs * math.sin(angle) + ys * math.cos(angle)
    if kind == "checker":
        period = rng.uniform(6.0, 16.0)
        t = ((np.floor(u / period) + np.floor(v / period)) % 2).astype(np.float64)
    elif kind == "stripes":
        period = rng.uniform(4.0, 12.0)
        t = (np.sin(2.0 * math.pi * u / period) > 0).astype(np.float64)
    elif kind == "noise":
        t = gaussian_filter(rng.normal(size=(H, W)), sigma=rng.uniform(1.0, 3.0), mode="reflect")
        t = (t - t.min()) / max(t.max() - t.min(), 1e-8)
    elif kind == "flat":
        t = np.zeros((H, W))
    else:
        raise ValueError(f"Família de textura desconhecida: {kind}")
    return a[:, None, None] * (1.0 - t) + b[:, None, None] * t


def lighting_bucket(strength: float) -> str:
    if strength < 0.15:
        return "none"
    if strength < 0.35:
        return "weak"
    return "strong"


def apply_lighting(rgb: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    _, H, W = rgb.shape
    angle = rng.uniform(0.0, 2.0 * math.pi)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    ramp = xs / max(W - 1, 1) * math.cos(angle) + ys / max(H - 1, 1) * math.sin(angle)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-8)
    gain = 1.0 - strength / 2.0 + strength * ramp
    return np.clip(rgb * gain[None], 0.0, 1.0)


# ---------------------------------------------------------------------------
#  Geometria da toalha
# ---------------------------------------------------------------------------

def _bilinear(quad: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    q0, q1, q2, q3 = quad
    u, v = u[:, None], v[:, None]
    return (1 - u) * (1 - v) * q0 + u * (1 - v) * q1 + u * v * q2 + (1 - u) * v * q3


def _outline(quad: np.ndarray, u1: float, v1: float) -> Tuple[np.ndarray, List[int]]:
    """Contorno amostrado de [0,u1] x [0,v1] e os índices dos quatro vértices."""
    t = np.linspace(0.0, 1.0, EDGE_SAMPLES, endpoint=False)
    edges = [
        (t * u1, np.zeros_like(t)),
        (np.full_like(t, u1), t * v1),
        (u1 - t * u1, np.full_like(t, v1)),
        (np.zeros_like(t), v1 - t * v1),
    ]
    pts = np.concatenate([_bilinear(quad, u, v) for u, v in edges])
    return pts, [0, EDGE_SAMPLES, 2 * EDGE_SAMPLES, 3 * EDGE_SAMPLES]


def _warp(pts: np.ndarray, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    if amplitude <= 0:
        return pts
    lam = rng.uniform(25.0, 60.0, size=2)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=2)
    dx = amplitude * np.sin(2.0 * math.pi * pts[:, 1] / lam[0] + phase[0])
    dy = amplitude * np.sin(2.0 * math.pi * pts[:, 0] / lam[1] + phase[1])
    return pts + np.stack([dx, dy], axis=1)


def outward_bisector(prev_pt: np.ndarray, corner: np.ndarray, next_pt: np.ndarray) -> Optional[float]:
    """Ângulo da bissetriz externa no canto; None quando as arestas são quase colineares."""
    e1 = prev_pt - corner
    e2 = next_pt - corner
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 < 1e-9 or n2 < 1e-9:
        return None
    inner = e1 / n1 + e2 / n2
    if np.linalg.norm(inner) < 1e-3:
        return None
    return math.atan2(-inner[1], -inner[0])


def polygon_mask(points: np.ndarray, H: int, W: int) -> np.ndarray:
    canvas = Image.new("L", (W, H), 0)
    ImageDraw.Draw(canvas).polygon([(float(x), float(y)) for x, y in points], fill=1)
    return np.asarray(canvas, dtype=bool)


def _random_quad(rng: np.random.Generator, config: SceneConfig) -> np.ndarray:
    H, W = config.height, config.width
    side = rng.uniform(*config.towel_size) * min(H, W)
    alpha = rng.uniform(0.0, 2.0 * math.pi)
    rot = np.array([[math.cos(alpha), -math.sin(alpha)], [math.sin(alpha), math.cos(alpha)]])
    canonical = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]) * side
    canonical = canonical + rng.uniform(-config.perspective, config.perspective, size=(4, 2)) * side
    body = canonical @ rot.T
    margin = config.warp_amplitude + 2.0
    lo = -body.min(axis=0) + margin
    hi = np.array([W - 1, H - 1], dtype=np.float64) - body.max(axis=0) - margin
    if np.any(hi < lo):
        center = np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    else:
        center = rng.uniform(lo, hi)
    return body + center


def _place_clutter(rng: np.random.Generator, config: SceneConfig, corners: np.ndarray
                   ) -> List[Tuple[float, float, float, float]]:
    H, W = config.height, config.width
    rects = []
    for _ in range(int(rng.integers(CLUTTER_MIN, CLUTTER_MAX + 1))):
        w = rng.uniform(*CLUTTER_SIZE_RANGE) * min(H, W)
        h = rng.uniform(*CLUTTER_SIZE_RANGE) * min(H, W)
        if rng.random() < CLUTTER_NEAR_CORNER_PROB:
            cx, cy = corners[int(rng.integers(len(corners)))] + rng.uniform(-0.4, 0.4, size=2) * (w, h)
        else:
            cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        rects.append((float(cx - w / 2), float(cy - h / 2), float(cx + w / 2), float(cy + h / 2)))
    return rects


def _inside_rect(x: float, y: float, rect: Tuple[float, float, float, float]) -> bool:
    x0, y0, x1, y1 = rect
    return x0 <= x <= x1 and y0 <= y <= y1


def generate_scene(rng: np.random.Generator, config: SceneConfig,
                   towel_families: Optional[Sequence[str]] = None,
                   background_families: Optional[Sequence[str]] = None) -> Scene:
    """
    Gera uma cena rotulada. `towel_families`/`background_families` restringem as
    famílias sorteadas (usado para manter texturas fora do split de treino).
    """
    config.validate()
    H, W = config.height, config.width
    towel_pool = list(towel_families or config.textures)
    bg_pool = list(background_families or config.textures)

    for attempt in range(MAX_RETRIES):
        towel_kind = towel_pool[int(rng.integers(len(towel_pool)))]
        bg_kind = bg_pool[int(rng.integers(len(bg_pool)))]
        quad = _random_quad(rng, config)

        fold = "none"
        if rng.random() < config.fold_prob:
            fold = "half" if rng.random() < 2.0 / 3.0 else "quarter"
        u1 = 0.5 if fold in ("half", "quarter") else 1.0
        v1 = 0.5 if fold == "quarter" else 1.0
        # Cantos reais: (0,0) sempre; (u1,0) e (u1,v1) só sem dobra em u; (0,v1) só sem dobra em v
        real = [True, u1 == 1.0, u1 == 1.0 and v1 == 1.0, v1 == 1.0]

        outline, vertex_idx = _outline(quad, u1, v1)
        outline = _warp(outline, config.warp_amplitude, rng)
        if outline.min() < 0 or np.any(outline.max(axis=0) > np.array([W - 1, H - 1])):
            logger.debug(f"Cena descartada (contorno fora da imagem), tentativa {attempt}")
            continue

        n = len(outline)
        corners, thetas = [], []
        degenerate = False
        for k, idx in enumerate(vertex_idx):
            if not real[k]:
                continue
            theta = outward_bisector(outline[(idx - 1) % n], outline[idx], outline[(idx + 1) % n])
            if theta is None:
                degenerate = True
                break
            corners.append(outline[idx])
            thetas.append(theta)
        if degenerate:
            logger.debug(f"Cena descartada (canto degenerado), tentativa {attempt}")
            continue
        corners_arr = np.array(corners)

        clutter = _place_clutter(rng, config, corners_arr) if rng.random() < config.clutter_prob else []
        points = [
            PointAnnotation(c[0], c[1], t, visible=not any(_inside_rect(c[0], c[1], r) for r in clutter))
            for c, t in zip(corners, thetas)
        ]
        n_visible = sum(p.visible for p in points)
        if n_visible == 0:
            logger.debug(f"Cena descartada (nenhum canto visível), tentativa {attempt}")
            continue

        rgb = render_texture(bg_kind, rng, H, W)
        towel_rgb = render_texture(towel_kind, rng, H, W)
        mask = polygon_mask(outline, H, W)
        rgb = np.where(mask[None], towel_rgb, rgb)
        clutter_mask = np.zeros((H, W), dtype=bool)
        for x0, y0, x1, y1 in clutter:
            color = rng.uniform(0.0, 1.0, size=3)
            r0, r1 = max(int(math.ceil(y0)), 0), min(int(math.floor(y1)) + 1, H)
            c0, c1 = max(int(math.ceil(x0)), 0), min(int(math.floor(x1)) + 1, W)
            if r0 < r1 and c0 < c1:
                rgb[:, r0:r1, c0:c1] = color[:, None, None]
                clutter_mask[r0:r1, c0:c1] = True
        strength = float(rng.uniform(*config.lighting_range))
        rgb = apply_lighting(rgb, strength, rng)

        channels = [rgb]
        if config.depth_enabled:
            bump = rng.uniform(0.1, 0.3) * (2.0 if fold != "none" else 1.0)
            depth = 0.2 + bump * gaussian_filter(mask.astype(np.float64), sigma=2.0, mode="nearest")
            depth = np.where(clutter_mask, 0.85, depth)
            channels.append(np.clip(depth, 0.0, 1.0)[None])

        tags = {
            "towel": towel_kind,
            "background": bg_kind,
            "lighting": lighting_bucket(strength),
            "clutter": "yes" if clutter else "no",
            "corner_config": str(n_visible),
        }
        image = np.concatenate(channels, axis=0).astype(np.float32)
        return Scene(image, points, tags, outline, clutter)

    raise GraspError(f"Não foi possível gerar uma cena válida após {MAX_RETRIES} tentativas.")


# ---------------------------------------------------------------------------
#  Dataset
# ---------------------------------------------------------------------------

def split_assignment(n: int, seed: int, train_fraction: float = 0.8) -> List[str]:
    """Split estável por hash do índice: exatamente round(n * fração) cenas de treino."""
    n_train = int(round(n * train_fraction))
    ranked = sorted(range(n), key=lambda i: hashlib.sha256(f"{seed}:{i}".encode()).hexdigest())
    train = set(ranked[:n_train])
    return ["train" if i in train else "test" for i in range(n)]


def _families_for(split: str, config: SceneConfig, holdout: Optional[str]) -> Optional[List[str]]:
    if split != "train" or holdout is None:
        return None
    pool = [t for t in config.textures if t != holdout]
    if not pool:
        raise ValueError(f"Reservar '{holdout}' deixaria o treino sem famílias de textura.")
    return pool


def generate_dataset(n: int, config: SceneConfig, out_dir: Union[str, Path], train_fraction: float = 0.8,
                     holdout_towel: Optional[str] = None, holdout_background: Optional[str] = None,
                     threads: int = 1) -> Dict:
    """
    Grava n imagens PNG (+ profundidade de 16 bits), annotations.json e manifest.json.
    Cenas dependem só de (seed, índice); em caso de falha de IO os arquivos escritos são removidos.
    """
    if n < 1:
        raise ValueError(f"n deve ser >= 1: {n}")
    config.validate()
    for held in (holdout_towel, holdout_background):
        if held is not None and held not in config.textures:
            raise ValueError(f"Família reservada desconhecida: {held}")

    out = Path(out_dir)
    created_root = not out.exists()
    images_dir = out / "images"
    splits = split_assignment(n, config.seed, train_fraction)
    written: List[Path] = []

    def build(index: int) -> Dict:
        rng = np.random.default_rng([config.seed, index])
        split = splits[index]
        scene = generate_scene(rng, config, _families_for(split, config, holdout_towel),
                               _families_for(split, config, holdout_background))
        name = f"images/scene_{index:05d}.png"
        DatasetRepository.write_rgb(out / name, scene.image[:3])
        written.append(out / name)
        if config.depth_enabled:
            DatasetRepository.write_depth(out / depth_filename(name), scene.image[3])
            written.append(out / depth_filename(name))
        if (index + 1) % 50 == 0:
            logger.info(f"{index + 1}/{n} cenas geradas")
        return {"image": name, "points": points_to_json(scene.points), "tags": scene.tags, "split": split}

    try:
        images_dir.mkdir(parents=True, exist_ok=True)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                records = list(pool.map(build, range(n)))
        else:
            records = [build(i) for i in range(n)]
        DatasetRepository.save_annotations(out / ANNOTATIONS_FILE, records)
        written.append(out / ANNOTATIONS_FILE)
        manifest = {
            "n": n,
            "seed": config.seed,
            "config": asdict(config),
            "config_hash": config_hash(config),
            "counts": {"train": splits.count("train"), "test": splits.count("test")},
            "holdout": {"towel": holdout_towel, "background": holdout_background},
            "annotations": ANNOTATIONS_FILE,
        }
        write_json(out / "manifest.json", manifest)
    except (OSError, DataIOError) as e:
        for path in written:
            path.unlink(missing_ok=True)
        if created_root:
            shutil.rmtree(out, ignore_errors=True)
        raise DataIOError(f"Falha ao gravar dataset em {out}: {e}") from e

    logger.info(f"Dataset sintético: {n} cenas ({manifest['counts']}) em {out}")
    return manifest
