import hashlib
import json
import logging
import os
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "GRASPNET_OUTPUT_DIR"
ENV_THREADS = "GRASPNET_THREADS"

_dotenv_loaded = False


def _ensure_dotenv() -> None:
    global _dotenv_loaded
    if not _dotenv_loaded:
        # Não sobrescreve variáveis já exportadas no ambiente
        load_dotenv(override=False)
        _dotenv_loaded = True


def resolve_output_dir(explicit: Optional[str]) -> Optional[Path]:
    """
    Resolve o diretório de saída.
    Prioridade: argumento explícito > variável de ambiente (.env incluído) > None.
    """
    if explicit:
        return Path(explicit)
    _ensure_dotenv()
    env_value = os.environ.get(ENV_OUTPUT_DIR)
    if env_value:
        logger.info(f"Diretório de saída vindo de {ENV_OUTPUT_DIR}: {env_value}")
        return Path(env_value)
    return None


def resolve_threads(explicit: Optional[int]) -> int:
    """Limite de workers: argumento explícito > variável de ambiente > 1."""
    if explicit is not None:
        return max(1, int(explicit))
    _ensure_dotenv()
    env_value = os.environ.get(ENV_THREADS)
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            logger.warning(f"{ENV_THREADS} inválido ({env_value!r}); usando 1 thread.")
    return 1


def to_plain(obj: Any) -> Any:
    """Converte dataclasses/Paths/tuplas em estruturas JSON puras."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: to_plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def config_hash(obj: Any) -> str:
    """SHA-256 do JSON canônico (chaves ordenadas) de uma configuração."""
    canonical = json.dumps(to_plain(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_json(path: Union[str, Path], payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_plain(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: Union[str, Path]) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_snapshot(out_dir: Union[str, Path], command: str, config: Dict[str, Any]) -> Path:
    """Grava o snapshot da configuração resolvida ao lado das saídas (run_config.json)."""
    payload = {"command": command, "config": to_plain(config)}
    path = write_json(Path(out_dir) / "run_config.json", payload)
    logger.info(f"Snapshot de configuração salvo em {path}")
    return path
