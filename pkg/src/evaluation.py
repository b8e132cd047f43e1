"""
Protocolo de avaliação: pareamento guloso um-para-um por limiar de distância,
precisão/revocação/F1, erros de localização (px) e orientação (graus), e o
relatório paramétrico por família de tags.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.core.errors import DataIOError, SchemaError
from src.fields import GraspDetection, PointAnnotation
from src.repositories.dataset_repository import points_from_record
from src.utils import TAG_FAMILIES, DocGenerator, DomainValidators

logger = logging.getLogger(__name__)

MODES = ("per_image", "pooled")
DEFAULT_THRESHOLDS = (20.0, 10.0, 5.0)


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)
    unmatched_predictions: List[int] = field(default_factory=list)
    unmatched_gts: List[int] = field(default_factory=list)


@dataclass
class ImageEval:
    """Resultado do pareamento de uma imagem."""
    name: str
    match: MatchResult
    n_predictions: int
    n_gts: int
    loc_errors: List[float]
    ori_errors: List[float]
    tags: Dict[str, str] = field(default_factory=dict)

    @property
    def tp(self) -> int:
        return len(self.match.pairs)

    @property
    def fp(self) -> int:
        return len(self.match.unmatched_predictions)

    @property
    def fn(self) -> int:
        return len(self.match.unmatched_gts)


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    mean_localization_error: float
    mean_orientation_error: float
    threshold: float
    n_images: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    mode: str = "per_image"
    tags: Dict[str, str] = field(default_factory=dict)

    def as_row(self) -> Dict[str, object]:
        row = asdict(self)
        row.pop("tags")
        return row


def match_detections(preds: Sequence[GraspDetection], gts: Sequence[PointAnnotation],
                     threshold: float = 20.0) -> MatchResult:
    """
    Percorre as predições por score decrescente (empate: menor índice); cada uma
    leva o GT visível livre mais próximo dentro do limiar (empate: menor índice).
    GTs não visíveis não participam.
    """
    threshold = DomainValidators.validate_threshold(threshold)
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    free = [j for j, g in enumerate(gts) if g.visible]
    result = MatchResult()
    for i in order:
        best_j, best_d = None, None
        for j in free:
            d = math.hypot(preds[i].x - gts[j].x, preds[i].y - gts[j].y)
            if d <= threshold and (best_d is None or d < best_d):
                best_j, best_d = j, d
        if best_j is None:
            result.unmatched_predictions.append(i)
        else:
            result.pairs.append((i, best_j, best_d))
            free.remove(best_j)
    result.unmatched_predictions.sort()
    result.unmatched_gts = sorted(free)
    return result


def angular_error(a: float, b: float) -> float:
    """Menor diferença angular em graus, em [0, 180]."""
    delta = abs(a - b) % (2.0 * math.pi)
    return math.degrees(min(delta, 2.0 * math.pi - delta))


def evaluate_image(name: str, preds: Sequence[GraspDetection], gts: Sequence[PointAnnotation],
                   threshold: float = 20.0, tags: Optional[Dict[str, str]] = None) -> ImageEval:
    match = match_detections(preds, gts, threshold)
    loc = [d for _, _, d in match.pairs]
    # Detecções sem ângulo (ex.: rede sem regressão de theta) ficam fora do erro de orientação
    ori = [angular_error(preds[i].theta, gts[j].theta) for i, j, _ in match.pairs if preds[i].has_angle]
    return ImageEval(name, match, len(preds), sum(g.visible for g in gts), loc, ori, dict(tags or {}))


def _precision_recall(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def _mean(values: List[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def compute_metrics(images: Sequence[ImageEval], threshold: float, mode: str = "per_image") -> EvalReport:
    """
    per_image: P, R e F1 calculados por imagem e depois promediados (imagem sem
    predições e sem GT vale 1). pooled: TP/FP/FN somados antes das razões.
    Erros médios são sempre sobre todos os pares do conjunto.
    """
    if mode not in MODES:
        raise ValueError(f"Modo de agregação inválido: {mode}")
    tp = sum(im.tp for im in images)
    fp = sum(im.fp for im in images)
    fn = sum(im.fn for im in images)
    loc = [e for im in images for e in im.loc_errors]
    ori = [e for im in images for e in im.ori_errors]
    if not images:
        precision = recall = f1 = 0.0
    elif mode == "pooled":
        precision, recall, f1 = _precision_recall(tp, fp, fn)
    else:
        per_image = np.array([_precision_recall(im.tp, im.fp, im.fn) for im in images])
        precision, recall, f1 = (float(v) for v in per_image.mean(axis=0))
    return EvalReport(precision, recall, f1, _mean(loc), _mean(ori), float(threshold),
                      len(images), tp, fp, fn, mode)


def parametric_report(images: Sequence[ImageEval], threshold: float, mode: str = "per_image",
                      families: Sequence[str] = TAG_FAMILIES) -> Tuple[pd.DataFrame, Dict[str, int]]:
    """
    Uma linha por valor de tag em cada família, ordenadas por F1 decrescente
    dentro da família. Imagens sem a tag ficam fora da família e são contadas.
    """
    rows = []
    missing: Dict[str, int] = {}
    for family in families:
        groups: Dict[str, List[ImageEval]] = {}
        missing[family] = 0
        for im in images:
            value = im.tags.get(family)
            if value is None:
                missing[family] += 1
                continue
            groups.setdefault(value, []).append(im)
        if missing[family]:
            logger.warning(f"{missing[family]} imagem(ns) sem a tag '{family}' excluída(s) dessa família")
        family_rows = []
        for value, members in groups.items():
            report = compute_metrics(members, threshold, mode)
            family_rows.append({"family": family, "value": value, **report.as_row()})
        family_rows.sort(key=lambda r: (-r["f1"], r["value"]))
        rows.extend(family_rows)
    columns = ["family", "value", "n_images", "precision", "recall", "f1", "mean_localization_error",
               "mean_orientation_error", "tp", "fp", "fn", "threshold", "mode"]
    df = pd.DataFrame(rows, columns=columns)
    return df, missing


def evaluate_dataset(predictions: Dict[str, List[GraspDetection]], annotations: Sequence[Dict],
                     threshold: float) -> List[ImageEval]:
    """
    Avalia cada imagem presente nas predições contra o registro de anotação.
    Predição para imagem sem anotação é erro de schema.
    """
    by_name = {rec["image"]: rec for rec in annotations}
    orphans = sorted(name for name in predictions if name not in by_name)
    if orphans:
        raise SchemaError(f"{len(orphans)} imagem(ns) sem anotação: {orphans[:5]}")
    not_predicted = [name for name in by_name if name not in predictions]
    if not_predicted:
        logger.warning(f"{len(not_predicted)} imagem(ns) anotada(s) sem predições foram ignoradas")
    return [
        evaluate_image(name, preds, points_from_record(by_name[name]), threshold, by_name[name].get("tags"))
        for name, preds in sorted(predictions.items())
    ]


# ---------------------------------------------------------------------------
#  Renderizações
# ---------------------------------------------------------------------------

def reports_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in reports])


def write_tables(df: pd.DataFrame, out_dir: Union[str, Path], stem: str, header: str,
                 excel: bool = False, pdf: bool = False, summary: Optional[Dict[str, float]] = None
                 ) -> List[Path]:
    """CSV + texto alinhado (e, opcionalmente, Excel e PDF) com o modo de agregação no cabeçalho."""
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        df.to_csv(csv_path, index=False, float_format="%.6f")
        written.append(csv_path)
        txt_path = out / f"{stem}.txt"
        txt_path.write_text(DocGenerator.to_text(df, header), encoding="utf-8")
        written.append(txt_path)
        if excel:
            xlsx_path = out / f"{stem}.xlsx"
            xlsx_path.write_bytes(DocGenerator.to_excel({stem: df}).getvalue())
            written.append(xlsx_path)
        if pdf:
            payload = DocGenerator.to_pdf("Relatório de avaliação", header, summary or {}, df)
            if payload is not None:
                pdf_path = out / f"{stem}.pdf"
                pdf_path.write_bytes(payload)
                written.append(pdf_path)
    except OSError as e:
        raise DataIOError(f"Falha ao gravar relatório {stem} em {out}: {e}") from e
    return written
