"""
Funções de perda do treino.

- loss_center: L1 ponderada por W_eps sobre (C_sin, C_cos), somada por imagem e
  com média no batch.
- loss_theta: L1 sobre (D_sin, D_cos) restrita à máscara de ângulo, normalizada
  pela contagem de pixels mascarados por imagem e com média no batch.
- combined_loss: ponderação por incerteza na parametrização s = log(sigma^2).
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from src.core.errors import ShapeError
from src.numcore import Tensor, parameter, weighted_l1

logger = logging.getLogger(__name__)


def _as_batch(plane: np.ndarray) -> np.ndarray:
    plane = np.asarray(plane)
    return plane.reshape((1, 1) + plane.shape) if plane.ndim == 2 else plane


def _check(op: str, pred: Tensor, *planes: np.ndarray) -> None:
    for plane in planes:
        if plane.shape != pred.shape:
            raise ShapeError(op, "shape", pred.shape, plane.shape)


@dataclass
class UncertaintyWeights:
    """Log-variâncias aprendíveis, ambas iniciadas em 0 (sigma = 1)."""
    s_phi: Tensor = field(default_factory=lambda: parameter(np.zeros(()), name="uncertainty.s_phi"))
    s_theta: Tensor = field(default_factory=lambda: parameter(np.zeros(()), name="uncertainty.s_theta"))

    def parameters(self):
        return [self.s_phi, self.s_theta]

    def values(self):
        return self.s_phi.item(), self.s_theta.item()


def loss_center(pred_c_sin: Tensor, pred_c_cos: Tensor, gt_c_sin: np.ndarray, gt_c_cos: np.ndarray,
                weight: np.ndarray) -> Tensor:
    """
    sum(w * |pred_sin - gt_sin|) + sum(w * |pred_cos - gt_cos|), somado por
    imagem e dividido pelo tamanho do batch. Aceita planos H x W ou N x 1 x H x W.
    """
    gt_c_sin, gt_c_cos, weight = _as_batch(gt_c_sin), _as_batch(gt_c_cos), _as_batch(weight)
    _check("loss_center", pred_c_sin, gt_c_sin, weight)
    _check("loss_center", pred_c_cos, gt_c_cos, weight)
    n = pred_c_sin.shape[0]
    return (weighted_l1(pred_c_sin, gt_c_sin, weight) + weighted_l1(pred_c_cos, gt_c_cos, weight)) / n


def loss_theta(pred_d_sin: Tensor, pred_d_cos: Tensor, gt_d_sin: np.ndarray, gt_d_cos: np.ndarray,
               mask: np.ndarray) -> Tensor:
    """L1 mascarada; cada imagem é normalizada pela própria contagem de pixels (máscara vazia contribui 0)."""
    gt_d_sin, gt_d_cos, mask = _as_batch(gt_d_sin), _as_batch(gt_d_cos), _as_batch(mask)
    _check("loss_theta", pred_d_sin, gt_d_sin, mask)
    _check("loss_theta", pred_d_cos, gt_d_cos, mask)
    n = pred_d_sin.shape[0]
    counts = mask.reshape(n, -1).sum(axis=1)
    per_pixel = np.zeros_like(mask, dtype=np.float64)
    for i in range(n):
        if counts[i] > 0:
            per_pixel[i] = mask[i] / counts[i]
    return (weighted_l1(pred_d_sin, gt_d_sin, per_pixel) + weighted_l1(pred_d_cos, gt_d_cos, per_pixel)) / n


def combined_loss(l_phi: Tensor, l_theta: Tensor, u: UncertaintyWeights) -> Tensor:
    """exp(-s_phi)/2 * L_phi + exp(-s_theta)/2 * L_theta + (s_phi + s_theta)/2."""
    return (
        (-u.s_phi).exp() * l_phi * 0.5
        + (-u.s_theta).exp() * l_theta * 0.5
        + (u.s_phi + u.s_theta) * 0.5
    )


def unweighted_loss(l_phi: Tensor, l_theta: Tensor) -> Tensor:
    """Soma simples, usada quando a ponderação por incerteza está desligada."""
    return l_phi + l_theta
