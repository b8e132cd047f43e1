from typing import TypeVar, Generic, Optional

T = TypeVar('T')

EXIT_OK = 0
EXIT_FAILURE = 1


class Result(Generic[T]):
    """
    Padrão 'Result' para tratamento de erros funcional.
    Os serviços devolvem Result e o orquestrador (main.py) traduz a falha
    para o código de saída do processo.
    """
    def __init__(self, is_success: bool, data: Optional[T], error: Optional[str], exit_code: int = EXIT_OK):
        self.is_success = is_success
        self.data = data
        self.error = error
        self.exit_code = exit_code

    @classmethod
    def success(cls, data: T) -> 'Result[T]':
        return cls(True, data, None, EXIT_OK)

    @classmethod
    def failure(cls, error: str, exit_code: int = EXIT_FAILURE) -> 'Result[T]':
        return cls(False, None, error, exit_code)

    @classmethod
    def from_exception(cls, exc: Exception) -> 'Result[T]':
        """Converte uma exceção de domínio (GraspError) mantendo o código de saída."""
        return cls(False, None, str(exc), getattr(exc, 'exit_code', EXIT_FAILURE))

    def __repr__(self) -> str:
        if self.is_success:
            return f"Result.success({self.data!r})"
        return f"Result.failure({self.error!r}, exit_code={self.exit_code})"
