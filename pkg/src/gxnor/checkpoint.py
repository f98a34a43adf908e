"""Versioned binary checkpoints ("GXNR1").

Layout: 5-byte magic ``GXNR1``, one format-version byte, a little-endian
uint32 header length, a UTF-8 JSON header, then raw array payloads.  The
header carries the full run config (enough to rebuild the network), the
input shape, measured activation zero fractions, and one descriptor per
stored array (encoding, dtype, shape, offset, byte count).

Ternary weight tensors are stored as mask/sign bit planes (64-bit
little-endian words, lane i at bit i mod 64 of word i div 64); other grid
tensors as uint16 grid indices; batch-norm state as float64.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict

import numpy as np

from .config import ConfigError, RunConfig
from .kernel import PackedMatrix, pack_ternary_matrix, unpack_ternary_matrix
from .layers import BatchNorm, Conv2d, Dense
from .network import Network, build_network

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"GXNR1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupt, or wrong-format checkpoint."""


class _PayloadWriter:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.arrays: list[dict] = []
        self.offset = 0

    def add(self, name: str, encoding: str, arr: np.ndarray, dtype: str) -> None:
        blob = np.ascontiguousarray(arr).astype(dtype).tobytes()
        self.arrays.append({
            "name": name,
            "encoding": encoding,
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": self.offset,
            "nbytes": len(blob),
        })
        self.chunks.append(blob)
        self.offset += len(blob)


def _add_grid_tensor(writer: _PayloadWriter, name: str, param) -> None:
    value, space = param.value, param.space
    if space.n == 1:
        rows = value.reshape(value.shape[0], -1)
        planes = pack_ternary_matrix(np.rint(rows / space.h).astype(np.int64))
        writer.add(f"{name}.mask", "ternary-planes", planes.mask, "<u8")
        writer.add(f"{name}.sign", "ternary-planes", planes.sign, "<u8")
        writer.arrays[-2]["value_shape"] = list(value.shape)
        writer.arrays[-1]["value_shape"] = list(value.shape)
    else:
        writer.add(name, "grid-index", space.index_of(value).astype(np.uint16), "<u2")


def save_checkpoint(
    path: str,
    net: Network,
    config: RunConfig,
    activation_zero_fractions: list[float] | None = None,
) -> None:
    writer = _PayloadWriter()
    for i, layer in enumerate(net.layers):
        if isinstance(layer, (Dense, Conv2d)):
            _add_grid_tensor(writer, f"layer{i}.weight", layer.weight)
        elif isinstance(layer, BatchNorm):
            writer.add(f"layer{i}.gamma", "float", layer.gamma.value, "<f8")
            writer.add(f"layer{i}.beta", "float", layer.beta.value, "<f8")
            writer.add(f"layer{i}.running_mean", "float", layer.running_mean, "<f8")
            writer.add(f"layer{i}.running_var", "float", layer.running_var, "<f8")
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "input_shape": list(net.input_shape),
        "classes": net.classes,
        "activation_zero_fractions": activation_zero_fractions,
        "arrays": writer.arrays,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(bytes([FORMAT_VERSION]))
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            for chunk in writer.chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def _read_header(blob: bytes, path: str) -> tuple[dict, bytes]:
    lead = len(MAGIC) + 1 + 4
    if len(blob) < lead:
        raise CheckpointError(f"{path}: too short to be a checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    version = blob[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack("<I", blob[len(MAGIC) + 1:lead])
    if len(blob) < lead + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[lead:lead + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    return header, blob[lead + header_len:]


def _take(payload: bytes, desc: dict, path: str) -> np.ndarray:
    lo, hi = desc["offset"], desc["offset"] + desc["nbytes"]
    if hi > len(payload):
        raise CheckpointError(f"{path}: truncated payload for {desc['name']}")
    arr = np.frombuffer(payload[lo:hi], dtype=desc["dtype"])
    return arr.reshape(desc["shape"])


def load_checkpoint(path: str) -> tuple[Network, RunConfig, dict]:
    """Rebuild the network stored at ``path``; returns (net, config, header)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    header, payload = _read_header(blob, path)
    try:
        config = RunConfig(**header["config"]).validate()
    except (TypeError, KeyError, ConfigError) as exc:
        raise CheckpointError(f"{path}: invalid embedded config: {exc}") from exc
    net = build_network(
        config.architecture,
        n1=config.n1, n2=config.n2, h=config.h, r=config.r,
        surrogate=config.surrogate, a=config.a, seed=config.seed,
        input_shape=tuple(header["input_shape"]), classes=header["classes"],
    )
    by_name = {desc["name"]: desc for desc in header["arrays"]}

    def grab(name: str) -> np.ndarray:
        if name not in by_name:
            raise CheckpointError(f"{path}: missing array {name!r}")
        return _take(payload, by_name[name], path)

    for i, layer in enumerate(net.layers):
        if isinstance(layer, (Dense, Conv2d)):
            space = layer.weight.space
            if space.n == 1:
                mask_desc = by_name.get(f"layer{i}.weight.mask")
                if mask_desc is None:
                    raise CheckpointError(f"{path}: missing array 'layer{i}.weight.mask'")
                planes = PackedMatrix(
                    length=int(np.prod(mask_desc["value_shape"][1:])),
                    mask=grab(f"layer{i}.weight.mask"),
                    sign=grab(f"layer{i}.weight.sign"),
                )
                rows = unpack_ternary_matrix(planes) * space.h
                layer.weight.value = rows.reshape(mask_desc["value_shape"])
            else:
                idx = grab(f"layer{i}.weight").astype(np.int64)
                if idx.size and idx.max() >= space.num_states:
                    raise CheckpointError(f"{path}: grid index out of range in layer {i}")
                layer.weight.value = space.states()[idx]
        elif isinstance(layer, BatchNorm):
            layer.gamma.value = grab(f"layer{i}.gamma").copy()
            layer.beta.value = grab(f"layer{i}.beta").copy()
            layer.running_mean = grab(f"layer{i}.running_mean").copy()
            layer.running_var = grab(f"layer{i}.running_var").copy()
    return net, config, header
