"""Versioned network checkpoints."""
from __future__ import annotations

import json
import logging
import pickle
from pathlib import Path
from typing import Any

import torch

from ...errors import ConfigMismatchError, DataError
from ...schemas import NetConfig
from .networks import NetHandle, NetKind, build_net

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def save_checkpoint(
    net: NetHandle,
    path: str | Path,
    seed: int,
    epoch: int = 0,
) -> Path:
    """Write the network state, its configuration echo and the run seed."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "kind": net.kind,
        "config": net.config.model_dump(mode="json"),
        "epsilon": net.epsilon,
        "seed": int(seed),
        "epoch": int(epoch),
        "state": {
            name: tensor.detach().to(torch.float32).cpu().clone()
            if tensor.is_floating_point()
            else tensor.detach().cpu().clone()
            for name, tensor in net.module.state_dict().items()
        },
    }
    torch.save(payload, target)
    logger.info(
        "CHECKPOINT_SAVED %s",
        json.dumps({"path": str(target), "kind": net.kind, "epoch": epoch, "seed": seed}),
    )
    return target


def read_checkpoint(path: str | Path) -> dict[str, Any]:
    source = Path(path)
    if not source.exists():
        raise DataError(f"checkpoint not found: {source}")
    try:
        payload = torch.load(source, map_location="cpu", weights_only=True)
    except (RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise DataError(f"unreadable checkpoint {source}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise ConfigMismatchError(f"unsupported checkpoint format in {source}")
    return payload


def load_checkpoint(
    path: str | Path,
    kind: NetKind | None = None,
    expected: NetConfig | None = None,
) -> tuple[NetHandle, dict[str, Any]]:
    """Rebuild a network from disk; returns the handle and the checkpoint metadata.

    Raises :class:`ConfigMismatchError` when ``kind`` or ``expected`` differ
    from what the checkpoint was written with.
    """

    payload = read_checkpoint(path)
    if kind is not None and payload["kind"] != kind:
        raise ConfigMismatchError(
            f"checkpoint holds a {payload['kind']}, expected a {kind}"
        )
    config = NetConfig.model_validate(payload["config"])
    if expected is not None and expected != config:
        differing = sorted(
            key
            for key, value in expected.model_dump().items()
            if config.model_dump().get(key) != value
        )
        raise ConfigMismatchError(
            f"checkpoint configuration differs in {', '.join(differing)}"
        )
    net = build_net(payload["kind"], config, float(payload["epsilon"]))
    try:
        net.module.load_state_dict(payload["state"])
    except RuntimeError as exc:
        raise ConfigMismatchError(f"checkpoint state does not fit the network: {exc}") from exc
    meta = {key: payload[key] for key in ("kind", "seed", "epoch", "epsilon")}
    return net, meta


__all__ = ["FORMAT_VERSION", "save_checkpoint", "read_checkpoint", "load_checkpoint"]
