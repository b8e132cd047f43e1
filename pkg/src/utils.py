import io
import logging
import math
from enum import Enum
from typing import Any, Dict, List, Optional

import pandas as pd

# Imports para Excel
from openpyxl.styles import PatternFill, Font, Alignment
from openpyxl.utils import get_column_letter

from src.core.errors import SchemaError

# Configuração de Logs
logger = logging.getLogger(__name__)

# Dependências Opcionais
try:
    from fpdf import FPDF
except ImportError:
    logger.warning("Biblioteca 'fpdf' não encontrada. Relatório em PDF desativado.")
    FPDF = None


class TagFamily(Enum):
    TOWEL = "towel"
    BACKGROUND = "background"
    LIGHTING = "lighting"
    CLUTTER = "clutter"
    CORNER_CONFIG = "corner_config"


TAG_FAMILIES: List[str] = [f.value for f in TagFamily]


class DomainValidators:
    @staticmethod
    def validate_threshold(value: Any) -> float:
        try:
            val = float(value)
        except (TypeError, ValueError):
            raise ValueError(f"Limiar inválido: {value}")
        if not val > 0:
            raise ValueError("Limiar deve ser maior que zero.")
        return val

    @staticmethod
    def validate_angle_deg(value: Any, where: str) -> Optional[float]:
        """Aceita graus finitos; None representa ângulo indefinido."""
        if value is None:
            return None
        try:
            val = float(value)
        except (TypeError, ValueError):
            raise SchemaError(f"{where}: theta_deg inválido ({value!r})")
        if not math.isfinite(val):
            raise SchemaError(f"{where}: theta_deg não finito")
        return val

    @staticmethod
    def validate_point(point: Any, where: str) -> Dict[str, Any]:
        if not isinstance(point, dict):
            raise SchemaError(f"{where}: ponto deve ser um objeto")
        for key in ("x", "y", "theta_deg"):
            if key not in point:
                raise SchemaError(f"{where}: campo obrigatório ausente '{key}'")
        try:
            x, y = float(point["x"]), float(point["y"])
        except (TypeError, ValueError):
            raise SchemaError(f"{where}: coordenadas inválidas")
        theta = DomainValidators.validate_angle_deg(point["theta_deg"], where)
        if theta is None:
            raise SchemaError(f"{where}: anotação exige theta_deg definido")
        return {"x": x, "y": y, "theta_deg": theta, "visible": bool(point.get("visible", True))}

    @staticmethod
    def validate_annotation_record(record: Any, index: int) -> Dict[str, Any]:
        where = f"registro {index}"
        if not isinstance(record, dict):
            raise SchemaError(f"{where}: deve ser um objeto")
        image = record.get("image")
        if not isinstance(image, str) or not image:
            raise SchemaError(f"{where}: campo 'image' ausente ou vazio")
        points = record.get("points")
        if not isinstance(points, list):
            raise SchemaError(f"{where}: campo 'points' deve ser uma lista")
        tags = record.get("tags", {})
        if not isinstance(tags, dict):
            raise SchemaError(f"{where}: campo 'tags' deve ser um objeto")
        clean = {
            "image": image,
            "points": [DomainValidators.validate_point(p, f"{where}, ponto {j}") for j, p in enumerate(points)],
            "tags": {str(k): str(v) for k, v in tags.items()},
        }
        if "split" in record:
            clean["split"] = str(record["split"])
        return clean

    @staticmethod
    def validate_detection(det: Any, where: str) -> Dict[str, Any]:
        if not isinstance(det, dict):
            raise SchemaError(f"{where}: detecção deve ser um objeto")
        for key in ("x", "y", "score"):
            if key not in det:
                raise SchemaError(f"{where}: campo obrigatório ausente '{key}'")
        return {
            "x": float(det["x"]),
            "y": float(det["y"]),
            "theta_deg": DomainValidators.validate_angle_deg(det.get("theta_deg"), where),
            "score": float(det["score"]),
        }


class DocGenerator:
    """Renderizações de relatórios: texto alinhado, Excel estilizado e PDF."""

    @staticmethod
    def to_text(df: pd.DataFrame, title: str = "") -> str:
        body = df.to_string(index=False, float_format=lambda v: f"{v:.4f}") if not df.empty else "(vazio)"
        return f"{title}\n{body}\n" if title else f"{body}\n"

    @staticmethod
    def to_excel(sheets: Dict[str, pd.DataFrame]) -> io.BytesIO:
        out = io.BytesIO()
        try:
            with pd.ExcelWriter(out, engine='openpyxl') as writer:
                for sheet_name, df in sheets.items():
                    name = sheet_name[:31]
                    df.to_excel(writer, index=False, sheet_name=name)
                    ws = writer.sheets[name]
                    for cell in ws[1]:
                        cell.fill = PatternFill(start_color="2E7D32", end_color="2E7D32", fill_type="solid")
                        cell.font = Font(color="FFFFFF", bold=True)
                        cell.alignment = Alignment(horizontal="center")
                    for col in ws.columns:
                        ws.column_dimensions[get_column_letter(col[0].column)].width = 18
            out.seek(0)
        except Exception as e:
            logger.error(f"Falha ao gerar Excel: {e}")
            return io.BytesIO()
        return out

    @staticmethod
    def to_pdf(title: str, subtitle: str, summary: Dict[str, float], df: pd.DataFrame) -> Optional[bytes]:
        if FPDF is None: return None
        try:
            pdf = FPDF()
            pdf.add_page()

            # Título
            pdf.set_font("Arial", 'B', 16)
            pdf.set_text_color(46, 125, 50)
            pdf.cell(0, 10, title.encode('latin-1', 'ignore').decode('latin-1'), ln=True, align='C')

            pdf.set_font("Arial", '', 10)
            pdf.set_text_color(50)
            pdf.cell(0, 8, subtitle.encode('latin-1', 'ignore').decode('latin-1'), ln=True, align='C')

            # Resumo
            pdf.set_fill_color(240)
            pdf.rect(10, 30, 190, 15, 'F')
            pdf.set_y(32)
            pdf.set_font("Arial", 'B', 10)
            items = list(summary.items())[:4]
            width = 190 / max(len(items), 1)
            for key, value in items:
                pdf.cell(width, 10, f"{key}: {value:.3f}", align='C')
            pdf.ln(20)

            # Cabeçalho Tabela
            cols = list(df.columns)[:7]
            col_w = 190 / max(len(cols), 1)
            pdf.set_fill_color(50); pdf.set_text_color(255)
            pdf.set_font("Arial", 'B', 8)
            for c in cols: pdf.cell(col_w, 7, str(c)[:16], 1, 0, 'C', True)
            pdf.ln()

            # Linhas
            pdf.set_text_color(0); pdf.set_font("Arial", '', 8)
            for _, r in df.head(60).iterrows():
                for c in cols:
                    v = r[c]
                    text = f"{v:.3f}" if isinstance(v, float) else str(v)
                    pdf.cell(col_w, 6, text[:16].encode('latin-1', 'ignore').decode('latin-1'), 1)
                pdf.ln()

            return pdf.output(dest='S').encode('latin-1', 'ignore')
        except Exception as e:
            logger.error(f"Falha ao gerar PDF: {e}")
            return None
