"""Flat ``key = value`` experiment files for :class:`RunConfig`.

Nested models use dotted keys (``generator.depth = 3``), lists are comma
separated (``planes = axial,coronal``) and ``#`` starts a comment. Every
run writes the fully resolved file back out so it can be replayed.
"""
from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping

from pydantic import BaseModel, ValidationError

from ..errors import UsageError
from ..schemas import RunConfig

RESOLVED_NAME = "resolved_config.cfg"


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    head, _, _ = line.partition(" #")
    return head.strip()


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"{source}:{number}: expected 'key = value'")
        if key in values:
            raise UsageError(f"{source}:{number}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _nest(flat: Mapping[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise UsageError(f"key {key!r} conflicts with scalar key {part!r}")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise UsageError(f"key {key!r} conflicts with nested keys")
        node[parts[-1]] = value
    return nested


def _describe(exc: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}"
        for error in exc.errors()
    )


def build_run_config(flat: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(_nest(flat))
    except ValidationError as exc:
        raise UsageError(f"invalid configuration: {_describe(exc)}") from exc


def load_run_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Read ``path`` (optional) and apply ``overrides`` on top of it."""

    flat: dict[str, Any] = {}
    if path is not None:
        source = Path(path)
        if not source.is_file():
            raise UsageError(f"config file not found: {source}")
        flat.update(parse_flat(source.read_text(encoding="utf-8"), str(source)))
    for key, value in (overrides or {}).items():
        if value is not None:
            flat[key] = value
    return build_run_config(flat)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_format(item) for item in value)
    return str(value)


def _walk(model: BaseModel, prefix: str = "") -> Iterator[tuple[str, Any]]:
    for name in type(model).model_fields:
        value = getattr(model, name)
        if isinstance(value, BaseModel):
            yield from _walk(value, f"{prefix}{name}.")
        else:
            yield f"{prefix}{name}", value


def flatten(cfg: RunConfig) -> dict[str, str]:
    return {key: _format(value) for key, value in _walk(cfg)}


def config_keys() -> list[tuple[str, str]]:
    """Every accepted key with its default, in declaration order."""

    return list(flatten(RunConfig()).items())


def dump_run_config(cfg: RunConfig, path: str | Path | None = None) -> str:
    """Render ``cfg`` as a flat file; also write it when ``path`` is given."""

    lines = ["# resolved refinegan run configuration"]
    lines += [f"{key} = {value}" for key, value in flatten(cfg).items()]
    text = "\n".join(lines) + "\n"
    if path is not None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    return text


__all__ = [
    "RESOLVED_NAME",
    "parse_flat",
    "build_run_config",
    "load_run_config",
    "flatten",
    "config_keys",
    "dump_run_config",
]
