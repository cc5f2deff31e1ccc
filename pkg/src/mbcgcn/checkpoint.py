"""Binary checkpoint: little-endian "MBCG" header followed by float32 arrays."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .cascade import AGGREGATIONS, CascadeParams, ModelConfig

MAGIC = b"MBCG"
VERSION = 1
AGG_CODES = {name: code for code, name in enumerate(AGGREGATIONS)}


class CheckpointError(ValueError):
    pass


def to_bytes(params: CascadeParams, config: ModelConfig) -> bytes:
    M, d = params.P.shape
    N = params.Q.shape[0]
    header = [VERSION, M, N, d, config.B, AGG_CODES[config.aggregation],
              int(config.transform_enabled), *config.layers]
    out = [MAGIC, struct.pack(f"<{len(header)}I", *header)]
    for a in params.arrays():
        out.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(out)


def from_bytes(blob: bytes) -> tuple[CascadeParams, ModelConfig]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    off = 4

    def u32(count):
        nonlocal off
        vals = struct.unpack_from(f"<{count}I", blob, off)
        off += 4 * count
        return vals

    try:
        (version,) = u32(1)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        M, N, d, B, agg, ft = u32(6)
        layers = u32(B)
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    if agg >= len(AGGREGATIONS):
        raise CheckpointError(f"unknown aggregation code {agg}")
    config = ModelConfig(d=d, layers=layers, transform_enabled=bool(ft), aggregation=AGGREGATIONS[agg])

    def table(rows):
        nonlocal off
        size = rows * d * 4
        if off + size > len(blob):
            raise CheckpointError("truncated checkpoint body")
        a = np.frombuffer(blob, dtype="<f4", count=rows * d, offset=off).reshape(rows, d)
        off += size
        return a.astype(np.float64)

    P, Q = table(M), table(N)
    k = config.n_transforms
    wu = [table(d) for _ in range(k)]
    wi = [table(d) for _ in range(k)]
    if off != len(blob):
        raise CheckpointError("trailing bytes after checkpoint body")
    return CascadeParams(P, Q, wu, wi), config


def save(path: str | Path, params: CascadeParams, config: ModelConfig) -> None:
    Path(path).write_bytes(to_bytes(params, config))


def load(path: str | Path) -> tuple[CascadeParams, ModelConfig]:
    return from_bytes(Path(path).read_bytes())
