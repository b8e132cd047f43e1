"""
Suites de verificação de gradiente: cada operador diferenciável é comparado com
diferenças centrais em float64 sobre várias sementes.
"""
import logging
import math
from collections import OrderedDict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core.errors import VerificationError
from src.core.result import Result
from src.losses import UncertaintyWeights, combined_loss, loss_center, loss_theta
from src.numcore import (Tensor, backward, bilinear_upsample, check_gradients, conv2d, float64_mode, group_norm,
                         max_pool2d, parameter, relu, weighted_l1)

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-3
ANALYTIC_TOLERANCE = 1e-6
CLOSED_FORM_ROW = "combined_loss_closed_form"
DEFAULT_SEEDS = 20
FD_STEP = 1e-6

Case = Tuple[Callable[[], Tensor], List[Tensor]]


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Projeção aleatória fixa para reduzir a saída a um escalar sem gradientes triviais."""
    r = rng.normal(size=out.shape)
    return lambda y: (y * Tensor(r)).sum()


def _away_from(x: np.ndarray, value: float, margin: float) -> np.ndarray:
    near = np.abs(x - value) < margin
    return np.where(near, value + np.where(x >= value, margin, -margin), x)


def _conv2d_case(rng: np.random.Generator) -> Case:
    x = parameter(rng.normal(size=(1, 2, 6, 6)))
    w = parameter(rng.normal(size=(3, 2, 3, 3)))
    b = parameter(rng.normal(size=(3,)))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    proj = _project(conv2d(x, w, b, stride, padding), rng)
    return (lambda: proj(conv2d(x, w, b, stride, padding))), [x, w, b]


def _group_norm_case(rng: np.random.Generator) -> Case:
    x = parameter(rng.normal(size=(2, 4, 4, 4)))
    gamma = parameter(rng.normal(size=(4,)))
    beta = parameter(rng.normal(size=(4,)))
    groups = int(rng.choice([1, 2, 4]))
    proj = _project(group_norm(x, groups, gamma, beta), rng)
    return (lambda: proj(group_norm(x, groups, gamma, beta))), [x, gamma, beta]


def _relu_case(rng: np.random.Generator) -> Case:
    x = parameter(_away_from(rng.normal(size=(1, 2, 5, 5)), 0.0, 1e-2))
    proj = _project(relu(x), rng)
    return (lambda: proj(relu(x))), [x]


def _bilinear_case(rng: np.random.Generator) -> Case:
    x = parameter(rng.normal(size=(1, 2, 4, 3)))
    factor = int(rng.integers(2, 4))
    proj = _project(bilinear_upsample(x, factor), rng)
    return (lambda: proj(bilinear_upsample(x, factor))), [x]


def _max_pool_case(rng: np.random.Generator) -> Case:
    # Valores distintos e espaçados: sem empates dentro do passo de diferença finita
    values = rng.permutation(2 * 6 * 6).astype(np.float64) * 0.01
    x = parameter(values.reshape(1, 2, 6, 6))
    proj = _project(max_pool2d(x, 2, 2), rng)
    return (lambda: proj(max_pool2d(x, 2, 2))), [x]


def _l1_inputs(rng: np.random.Generator, shape) -> Tuple[np.ndarray, np.ndarray]:
    pred = rng.normal(size=shape)
    # |pred - gt| longe de 0
    gt = pred - _away_from(rng.normal(size=shape), 0.0, 1e-2)
    return pred, gt


def _loss_center_case(rng: np.random.Generator) -> Case:
    shape = (2, 1, 5, 5)
    ps, gs = _l1_inputs(rng, shape)
    pc, gc = _l1_inputs(rng, shape)
    weight = rng.uniform(0.1, 2.0, size=shape)
    s, c = parameter(ps), parameter(pc)
    return (lambda: loss_center(s, c, gs, gc, weight)), [s, c]


def _loss_theta_case(rng: np.random.Generator) -> Case:
    shape = (2, 1, 5, 5)
    ps, gs = _l1_inputs(rng, shape)
    pc, gc = _l1_inputs(rng, shape)
    mask = (rng.random(size=shape) < 0.5).astype(np.float64)
    mask[0, 0, 0, 0] = 1.0
    s, c = parameter(ps), parameter(pc)
    return (lambda: loss_theta(s, c, gs, gc, mask)), [s, c]


def _combined_case(rng: np.random.Generator) -> Case:
    l_phi = parameter(rng.uniform(0.0, 5.0))
    l_theta = parameter(rng.uniform(0.0, 5.0))
    u = UncertaintyWeights(parameter(rng.uniform(-2.0, 2.0)), parameter(rng.uniform(-2.0, 2.0)))
    return (lambda: combined_loss(l_phi, l_theta, u)), [l_phi, l_theta, u.s_phi, u.s_theta]


def _composite_case(rng: np.random.Generator) -> Case:
    x = parameter(rng.normal(size=(1, 2, 4, 4)))
    w = parameter(rng.normal(size=(4, 2, 3, 3)) * 0.5)
    b = parameter(rng.normal(size=(4,)))
    gamma = parameter(rng.uniform(0.5, 1.5, size=(4,)))
    beta = parameter(rng.normal(size=(4,)))
    target = rng.normal(size=(1, 4, 8, 8))
    weight = rng.uniform(0.5, 1.5, size=(1, 4, 8, 8))

    def fn() -> Tensor:
        h = relu(group_norm(conv2d(x, w, b, 1, 1), 2, gamma, beta))
        return weighted_l1(bilinear_upsample(h, 2), target, weight)

    return fn, [x, w, b, gamma, beta]


SUITES: "OrderedDict[str, Callable[[np.random.Generator], Case]]" = OrderedDict([
    ("conv2d", _conv2d_case),
    ("group_norm", _group_norm_case),
    ("relu", _relu_case),
    ("bilinear_upsample", _bilinear_case),
    ("max_pool2d", _max_pool_case),
    ("loss_center", _loss_center_case),
    ("loss_theta", _loss_theta_case),
    ("combined_loss", _combined_case),
    ("composite", _composite_case),
])


def combined_loss_analytic_error(rng: np.random.Generator) -> float:
    """
    Diferença máxima entre o autodiff de d/ds e a forma fechada
    (1 - exp(-s) * L) / 2 para as duas log-variâncias.
    """
    lp, lt = rng.uniform(0.0, 5.0), rng.uniform(0.0, 5.0)
    sp, st = rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)
    u = UncertaintyWeights(parameter(sp), parameter(st))
    backward(combined_loss(Tensor(lp), Tensor(lt), u))
    expected_p = (1.0 - math.exp(-sp) * lp) / 2.0
    expected_t = (1.0 - math.exp(-st) * lt) / 2.0
    return max(abs(float(u.s_phi.grad) - expected_p), abs(float(u.s_theta.grad) - expected_t))


def run_suite(name: str, seeds: int = DEFAULT_SEEDS, eps: float = FD_STEP) -> float:
    """Pior erro relativo do operador `name` sobre `seeds` sementes (float64)."""
    builder = SUITES[name]
    suite_id = list(SUITES).index(name)
    worst = 0.0
    with float64_mode():
        for seed in range(seeds):
            rng = np.random.default_rng([seed, suite_id])
            fn, tensors = builder(rng)
            worst = max(worst, check_gradients(fn, tensors, eps))
    logger.debug(f"{name}: erro relativo máximo {worst:.3e} em {seeds} sementes")
    return worst


def run_closed_form(seeds: int = DEFAULT_SEEDS) -> float:
    """Pior erro absoluto de d/ds contra a forma fechada, sobre `seeds` sementes."""
    worst = 0.0
    with float64_mode():
        for seed in range(seeds):
            worst = max(worst, combined_loss_analytic_error(np.random.default_rng([seed, len(SUITES)])))
    logger.debug(f"{CLOSED_FORM_ROW}: erro absoluto máximo {worst:.3e} em {seeds} sementes")
    return worst


def run_gradchecks(ops: Optional[Sequence[str]] = None, seeds: int = DEFAULT_SEEDS,
                   tolerance: float = DEFAULT_TOLERANCE) -> pd.DataFrame:
    """
    Tabela operador -> erro máximo; levanta VerificationError no primeiro operador reprovado.

    Com combined_loss na lista, entra também a linha da forma fechada, que tem
    limiar próprio (ANALYTIC_TOLERANCE) e não usa `tolerance`.
    """
    names = list(ops) if ops else list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"Operador(es) desconhecido(s): {unknown}. Disponíveis: {list(SUITES)}")
    if seeds < 1:
        raise ValueError(f"seeds deve ser positivo: {seeds}")
    rows = []
    for name in names:
        err = run_suite(name, seeds)
        rows.append({"operator": name, "seeds": seeds, "max_error": err, "tolerance": tolerance,
                     "passed": err < tolerance})
        if name == "combined_loss":
            err = run_closed_form(seeds)
            rows.append({"operator": CLOSED_FORM_ROW, "seeds": seeds, "max_error": err,
                         "tolerance": ANALYTIC_TOLERANCE, "passed": err < ANALYTIC_TOLERANCE})
    table = pd.DataFrame(rows, columns=["operator", "seeds", "max_error", "tolerance", "passed"])
    failed = table[~table["passed"]]
    if not failed.empty:
        first = failed.iloc[0]
        raise VerificationError(first["operator"], float(first["max_error"]), float(first["tolerance"]), table)
    return table


class GradcheckService:
    """Caso de uso 'gradcheck': roda as suites e devolve a tabela de erros."""

    def __init__(self, seeds: int = DEFAULT_SEEDS, tolerance: float = DEFAULT_TOLERANCE):
        self.seeds = seeds
        self.tolerance = tolerance

    def run(self, ops: Optional[Sequence[str]] = None) -> Result[pd.DataFrame]:
        try:
            table = run_gradchecks(ops, self.seeds, self.tolerance)
            logger.info(f"Gradcheck aprovado: {len(table)} operador(es)")
            return Result.success(table)
        except VerificationError as e:
            logger.error(str(e))
            result = Result.failure(str(e), exit_code=e.exit_code)
            result.data = e.table
            return result
        except ValueError as e:
            logger.error(f"Parâmetro inválido no gradcheck: {e}")
            return Result.failure(str(e), exit_code=2)
