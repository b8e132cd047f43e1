"""Aumento de dados: desfoque gaussiano e color jitter nos canais RGB."""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import gaussian_filter

logger = logging.getLogger(__name__)

_GRAY = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass
class AugmentConfig:
    blur_prob: float = 0.5
    blur_sigma: Tuple[float, float] = (0.5, 2.0)
    jitter_prob: float = 0.5
    brightness: float = 0.3
    contrast: float = 0.3
    saturation: float = 0.3
    hue: float = 0.3


@dataclass
class JitterFactors:
    brightness: float = 0.0
    contrast: float = 0.0
    saturation: float = 0.0
    hue: float = 0.0

    def is_identity(self) -> bool:
        return not (self.brightness or self.contrast or self.saturation or self.hue)


def gaussian_blur(rgb: np.ndarray, sigma: float) -> np.ndarray:
    """Desfoque por canal; borda refletida mantém a média de cada canal."""
    return np.stack([gaussian_filter(ch, sigma=sigma, mode="reflect") for ch in rgb])


def color_jitter(rgb: np.ndarray, factors: JitterFactors) -> np.ndarray:
    """
    Cada fator f multiplica/desloca por (1 + f): brilho escala, contraste afasta
    da média de cinza, saturação afasta do cinza do pixel, matiz gira f/2 voltas.
    Fatores nulos deixam o canal intacto.
    """
    out = rgb.astype(np.float64)
    if factors.brightness:
        out = out * (1.0 + factors.brightness)
    if factors.contrast:
        mean = float(np.tensordot(_GRAY, out, axes=1).mean())
        out = (out - mean) * (1.0 + factors.contrast) + mean
    if factors.saturation:
        gray = np.tensordot(_GRAY, out, axes=1)[None]
        out = (out - gray) * (1.0 + factors.saturation) + gray
    if factors.hue:
        hsv = rgb_to_hsv(np.clip(np.transpose(out, (1, 2, 0)), 0.0, 1.0))
        hsv[..., 0] = np.mod(hsv[..., 0] + factors.hue / 2.0, 1.0)
        out = np.transpose(hsv_to_rgb(hsv), (2, 0, 1))
    return np.clip(out, 0.0, 1.0)


def augment(image: np.ndarray, rng: np.random.Generator, config: Optional[AugmentConfig] = None) -> np.ndarray:
    """
    Aplica, com probabilidades independentes, desfoque e jitter aos três primeiros
    canais. O canal de profundidade (4º) nunca é alterado.
    """
    cfg = config or AugmentConfig()
    rgb = image[:3].astype(np.float64)
    changed = False

    if rng.random() < cfg.blur_prob:
        sigma = rng.uniform(*cfg.blur_sigma)
        rgb = gaussian_blur(rgb, sigma)
        changed = True
    if rng.random() < cfg.jitter_prob:
        factors = JitterFactors(
            brightness=rng.uniform(-cfg.brightness, cfg.brightness),
            contrast=rng.uniform(-cfg.contrast, cfg.contrast),
            saturation=rng.uniform(-cfg.saturation, cfg.saturation),
            hue=rng.uniform(-cfg.hue, cfg.hue),
        )
        if not factors.is_identity():
            rgb = color_jitter(rgb, factors)
            changed = True

    if not changed:
        return image
    out = image.copy()
    out[:3] = np.clip(rgb, 0.0, 1.0)
    return out
