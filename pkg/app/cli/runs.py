"""Run directories, config files and flag overrides shared by every subcommand."""

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar

from pydantic import BaseModel

from app.config import settings
from app.models.schemas import RunConfig
from app.utils.exceptions import InvalidConfigurationError
from app.utils.logger import attach_run_log, log

RESOLVED_CONFIG = "resolved_config.json"
LATEST_LINK = "latest"

Schema = TypeVar("Schema", bound=BaseModel)


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Merge ``overrides`` into ``base``; dotted keys address nested tables."""
    merged = json.loads(json.dumps(base))
    for key, value in overrides.items():
        node = merged
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise InvalidConfigurationError(f"override '{key}' descends into a non-table value")
        node[leaf] = value
    return merged


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Read a JSON config document (empty when no path is given)."""
    if not path:
        return {}
    config_path = Path(path)
    try:
        data = json.loads(config_path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise InvalidConfigurationError(f"config file {config_path} does not exist") from e
    except json.JSONDecodeError as e:
        raise InvalidConfigurationError(f"config file {config_path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise InvalidConfigurationError(f"config file {config_path} must hold a JSON object")
    return data


def resolve_config(schema: Type[Schema], path: Optional[str], overrides: Dict[str, Any]) -> Schema:
    """File values, then flags that were actually given (flags win)."""
    given = {k: v for k, v in overrides.items() if v is not None}
    return schema.model_validate(deep_merge(load_config_file(path), given))


def create_run_dir(subcommand: str, output_dir: Optional[str] = None) -> Path:
    """Explicit ``output_dir`` or a timestamped directory under settings.out_dir.

    Timestamped directories also repoint ``<out_dir>/latest`` at themselves.
    """
    if output_dir:
        run_dir = Path(output_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        attach_run_log(run_dir)
        return run_dir
    root = Path(settings.out_dir)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    run_dir = root / f"{stamp}-{subcommand}"
    run_dir.mkdir(parents=True, exist_ok=False)
    latest = root / LATEST_LINK
    try:
        if latest.is_symlink() or latest.exists():
            latest.unlink()
        latest.symlink_to(run_dir.name, target_is_directory=True)
    except OSError as e:
        log.warning(f"Could not update {latest}: {e}")
    attach_run_log(run_dir)
    return run_dir


def freeze_config(run_dir: Path, run: RunConfig, resolved: BaseModel) -> Path:
    """Write the fully resolved configuration next to the run's artifacts."""
    path = run_dir / RESOLVED_CONFIG
    document = {"run": run.model_dump(mode="json"), "config": resolved.model_dump(mode="json")}
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info(f"Resolved {run.subcommand} config written to {path}")
    return path


def run_config(subcommand: str, args: Any, resolved: BaseModel, overrides: Dict[str, Any], run_dir: Optional[Path] = None) -> RunConfig:
    """RunConfig record of one invocation."""
    return RunConfig(
        subcommand=subcommand,
        config_path=getattr(args, "config", None),
        overrides={k: v for k, v in overrides.items() if v is not None},
        output_dir=str(run_dir or getattr(resolved, "output_dir", "")),
        seed=getattr(resolved, "seed", 0),
    )


def start_run(subcommand: str, args: Any, resolved: BaseModel, overrides: Dict[str, Any]) -> Path:
    """Create the run directory and freeze the config into it."""
    run_dir = create_run_dir(subcommand, getattr(args, "output_dir", None))
    freeze_config(run_dir, run_config(subcommand, args, resolved, overrides, run_dir), resolved)
    return run_dir


def parse_int_list(text: str):
    return [int(part) for part in text.split(",") if part.strip()]


def parse_float_list(text: str):
    return [float(part) for part in text.split(",") if part.strip()]
