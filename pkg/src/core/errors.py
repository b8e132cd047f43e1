"""
Hierarquia de exceções do projeto.

Cada classe carrega o `exit_code` da taxonomia da CLI:
0 ok, 1 falha de verificação/métrica, 2 uso, 3 IO, 4 schema, 5 incompatibilidade
de modelo/checkpoint.
"""
from typing import Any, Optional

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SCHEMA = 4
EXIT_MISMATCH = 5


class GraspError(Exception):
    """Erro base do domínio."""
    exit_code: int = 1


class ShapeError(GraspError, ValueError):
    """Erro estruturado de forma: nomeia a operação e a dimensão problemática."""
    exit_code = EXIT_SCHEMA

    def __init__(self, op: str, dim: str, expected: Any = None, got: Any = None, message: Optional[str] = None):
        self.op = op
        self.dim = dim
        self.expected = expected
        self.got = got
        text = message or f"{op}: dimensão '{dim}' inválida (esperado {expected}, recebido {got})"
        super().__init__(text)


class PaddingError(ShapeError):
    """Dimensões espaciais não divisíveis por 2^níveis; a entrada deve ser preenchida (padding)."""


class ChannelMismatchError(ShapeError):
    exit_code = EXIT_MISMATCH


class SchemaError(GraspError):
    exit_code = EXIT_SCHEMA


class CheckpointError(GraspError):
    exit_code = EXIT_MISMATCH


class DataIOError(GraspError):
    exit_code = EXIT_IO


class TrainingDivergedError(GraspError):
    """Loss NaN/infinita durante o treino."""

    def __init__(self, phase: str, batch_id: int, lr: float, detail: str = ""):
        self.phase = phase
        self.batch_id = batch_id
        self.lr = lr
        super().__init__(
            f"Treino divergiu na fase '{phase}', batch {batch_id} (lr={lr:.3e}). {detail}".strip()
        )


class VerificationError(GraspError):
    def __init__(self, operator: str, max_rel_error: float, tolerance: float, table: Any = None):
        self.operator = operator
        self.max_rel_error = max_rel_error
        self.table = table
        super().__init__(
            f"Verificação de gradiente falhou em {operator}: erro {max_rel_error:.3e} >= {tolerance:.0e}"
        )
