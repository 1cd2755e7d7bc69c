"""Self-describing checkpoint container.

A checkpoint file is a zip of named numpy arrays (npz) plus a JSON metadata
blob holding the architecture descriptor and format version. Weight arrays
round-trip bit-exactly. Multi-network checkpoints store each sub-network
under a distinct `<namespace>/` key prefix.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError

FORMAT_VERSION = 1
META_KEY = "__meta__"


@dataclass
class NetworkParams:
    """Serializable parameter set: architecture descriptor + named weights."""

    arch: dict
    weights: dict[str, np.ndarray]
    version: int = FORMAT_VERSION


def snapshot_module(module: torch.nn.Module, arch: dict) -> NetworkParams:
    weights = {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}
    return NetworkParams(arch=dict(arch), weights=weights)


def load_into_module(module: torch.nn.Module, params: NetworkParams) -> None:
    state = module.state_dict()
    if set(state) != set(params.weights):
        missing = set(state) - set(params.weights)
        extra = set(params.weights) - set(state)
        raise ConfigError(f"checkpoint/arch mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, arr in params.weights.items():
        tensor = torch.from_numpy(np.asarray(arr))
        if tuple(tensor.shape) != tuple(state[name].shape):
            raise ConfigError(
                f"checkpoint/arch mismatch: {name} has shape {tuple(tensor.shape)}, "
                f"expected {tuple(state[name].shape)}"
            )
        state[name] = tensor.to(dtype=state[name].dtype)
    module.load_state_dict(state)


def save_checkpoint(
    path: str | os.PathLike,
    arches: dict[str, dict],
    arrays: dict[str, np.ndarray],
    extra_meta: dict | None = None,
) -> None:
    """Write namespaced arrays plus metadata; atomic via temp-file rename."""
    meta = {"version": FORMAT_VERSION, "arches": arches, "extra": extra_meta or {}}
    buf = io.BytesIO()
    np.savez(buf, **{META_KEY: np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}, **arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(path) as npz:
        if META_KEY not in npz:
            raise ConfigError(f"not a checkpoint file: {path}")
        meta = json.loads(bytes(npz[META_KEY].tobytes()).decode())
        arrays = {k: npz[k] for k in npz.files if k != META_KEY}
    if meta.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


def save_params(params: NetworkParams, path: str | os.PathLike, namespace: str = "net") -> None:
    arrays = {f"{namespace}/{k}": v for k, v in params.weights.items()}
    save_checkpoint(path, {namespace: params.arch}, arrays)


def load_params(path: str | os.PathLike, namespace: str = "net") -> NetworkParams:
    meta, arrays = load_checkpoint(path)
    return params_from_arrays(meta, arrays, namespace)


def params_from_arrays(meta: dict, arrays: dict[str, np.ndarray], namespace: str) -> NetworkParams:
    if namespace not in meta.get("arches", {}):
        raise ConfigError(f"checkpoint has no `{namespace}` namespace (has {sorted(meta.get('arches', {}))})")
    prefix = namespace + "/"
    weights = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    return NetworkParams(arch=meta["arches"][namespace], weights=weights, version=meta["version"])


def arrays_from_params(params: NetworkParams, namespace: str) -> dict[str, np.ndarray]:
    return {f"{namespace}/{k}": v for k, v in params.weights.items()}
