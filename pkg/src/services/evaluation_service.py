import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from src.core.config import write_snapshot
from src.core.errors import GraspError
from src.core.result import Result
from src.evaluation import (DEFAULT_THRESHOLDS, ImageEval, compute_metrics, evaluate_dataset, parametric_report,
                            reports_frame, write_tables)
from src.fields import GraspDetection
from src.repositories.dataset_repository import DatasetRepository
from src.utils import TAG_FAMILIES, DomainValidators

logger = logging.getLogger(__name__)


class EvaluationService:
    """
    Casos de uso 'eval' e 'report': lê predictions.json e as anotações do
    dataset e grava as tabelas de métricas.
    """

    def __init__(self, predictions_path: Union[str, Path], data_dir: Union[str, Path],
                 annotations: Optional[Union[str, Path]] = None):
        self.predictions_path = Path(predictions_path)
        self.repo = DatasetRepository(data_dir, annotations)

    def _load(self) -> Dict[str, List[GraspDetection]]:
        raw = DatasetRepository.load_predictions(self.predictions_path)
        return {name: [GraspDetection.from_json(d) for d in dets] for name, dets in raw.items()}

    def _images(self, threshold: float) -> List[ImageEval]:
        annotations = self.repo.load_annotations(self.repo.annotations_path)
        return evaluate_dataset(self._load(), annotations, threshold)

    def evaluate(self, out_dir: Union[str, Path], thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                 mode: str = "per_image") -> Result[pd.DataFrame]:
        """Um EvalReport por limiar, na ordem dada."""
        try:
            thresholds = [DomainValidators.validate_threshold(t) for t in thresholds]
            reports = [compute_metrics(self._images(t), t, mode) for t in thresholds]
            df = reports_frame(reports)
            header = f"Avaliação ({mode}) - {self.predictions_path}"
            write_tables(df, out_dir, "eval_report", header)
            write_snapshot(out_dir, "eval", {"predictions": self.predictions_path, "data": self.repo.root,
                                             "thresholds": thresholds, "mode": mode})
            for r in reports:
                logger.info(f"@{r.threshold:g}px [{mode}]: P={r.precision:.4f} R={r.recall:.4f} F1={r.f1:.4f} "
                            f"loc={r.mean_localization_error:.3f}px ori={r.mean_orientation_error:.3f}°")
            return Result.success(df)
        except GraspError as e:
            logger.error(f"Falha na avaliação: {e}")
            return Result.from_exception(e)
        except ValueError as e:
            logger.error(f"Parâmetro inválido na avaliação: {e}")
            return Result.failure(str(e), exit_code=2)

    def report(self, out_dir: Union[str, Path], threshold: float = DEFAULT_THRESHOLDS[0], mode: str = "per_image",
               families: Sequence[str] = TAG_FAMILIES, excel: bool = False, pdf: bool = False
               ) -> Result[pd.DataFrame]:
        """Quebra paramétrica por família de tag, com Excel/PDF opcionais."""
        try:
            threshold = DomainValidators.validate_threshold(threshold)
            images = self._images(threshold)
            df, missing = parametric_report(images, threshold, mode, families)
            overall = compute_metrics(images, threshold, mode)
            summary = {"precision": overall.precision, "recall": overall.recall, "f1": overall.f1,
                       "mean_localization_error": overall.mean_localization_error,
                       "mean_orientation_error": overall.mean_orientation_error}
            header = f"Relatório paramétrico @{threshold:g}px ({mode})"
            write_tables(df, out_dir, "parametric_report", header, excel=excel, pdf=pdf, summary=summary)
            write_snapshot(out_dir, "report", {"predictions": self.predictions_path, "data": self.repo.root,
                                               "threshold": threshold, "mode": mode, "families": list(families),
                                               "missing_tags": missing, "excel": excel, "pdf": pdf})
            return Result.success(df)
        except GraspError as e:
            logger.error(f"Falha no relatório: {e}")
            return Result.from_exception(e)
        except ValueError as e:
            logger.error(f"Parâmetro inválido no relatório: {e}")
            return Result.failure(str(e), exit_code=2)
