"""Checkpoint files: "OCSD" magic, version, JSON manifest, raw float32.

Layout (all integers little-endian):

    bytes 0-3   magic "OCSD"
    bytes 4-7   format version (u32), currently 1
    bytes 8-11  manifest length in bytes (u32)
    manifest    UTF-8 JSON: network config, epoch, base seed, optional
                ADAM step counter, and a "tensors" list of
                [name, dtype, shape] entries in payload order
    payloads    for each manifest entry, the raw little-endian float32
                bytes, densely packed

Parameters round-trip bit-exactly (raw bytes), so a reloaded model
forwards identically and an interrupted training run resumes on the
exact trajectory.  ADAM moments are stored as tensors named
``adam.m/<param>`` and ``adam.v/<param>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .network import NetworkConfig, param_shapes
from .training import AdamState

MAGIC = b"OCSD"
VERSION = 1
_DTYPE_TAGS = {"f4": np.dtype("<f4")}


class CheckpointError(ValueError):
    """Malformed, truncated, or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    adam: AdamState | None
    epoch: int
    seed: int

    def param_tensors(self) -> dict[str, Tensor]:
        return {name: Tensor(arr.copy(), requires_grad=True) for name, arr in self.params.items()}


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors: list[tuple[str, np.ndarray]] = [
        (name, np.ascontiguousarray(arr, dtype="<f4")) for name, arr in ckpt.params.items()
    ]
    if ckpt.adam is not None:
        for name, arr in ckpt.adam.m.items():
            tensors.append((f"adam.m/{name}", np.ascontiguousarray(arr, dtype="<f4")))
        for name, arr in ckpt.adam.v.items():
            tensors.append((f"adam.v/{name}", np.ascontiguousarray(arr, dtype="<f4")))
    manifest = {
        "config": {
            "over_channels": ckpt.config.over_channels,
            "under_channels": list(ckpt.config.under_channels),
            "input_channels": ckpt.config.input_channels,
            "output_channels": ckpt.config.output_channels,
            "seed": ckpt.config.seed,
        },
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "adam_t": ckpt.adam.t if ckpt.adam is not None else None,
        "tensors": [[name, "f4", list(arr.shape)] for name, arr in tensors],
    }
    meta = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for _, arr in tensors:
            fh.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", data, 8)
    if len(data) < 12 + meta_len:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[12 : 12 + meta_len].decode("utf-8"))
        config = NetworkConfig(
            over_channels=manifest["config"]["over_channels"],
            under_channels=tuple(manifest["config"]["under_channels"]),
            input_channels=manifest["config"]["input_channels"],
            output_channels=manifest["config"]["output_channels"],
            seed=manifest["config"]["seed"],
        )
        entries = [(str(n), str(d), tuple(int(v) for v in s)) for n, d, s in manifest["tensors"]]
        epoch = int(manifest["epoch"])
        seed = int(manifest["seed"])
        adam_t = manifest.get("adam_t")
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed manifest ({exc})") from exc

    offset = 12 + meta_len
    tensors: dict[str, np.ndarray] = {}
    for name, dtag, shape in entries:
        dtype = _DTYPE_TAGS.get(dtag)
        if dtype is None:
            raise CheckpointError(f"{path}: unsupported dtype tag {dtag!r} for {name}")
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated payload at tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype=dtype, count=nbytes // 4, offset=offset).reshape(
            shape
        ).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes after payloads")

    expected = param_shapes(config)
    params = {}
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {tensors[name].shape}, expected {shape}"
            )
        params[name] = tensors[name]

    adam = None
    if adam_t is not None:
        m = {n: tensors[f"adam.m/{n}"] for n in params if f"adam.m/{n}" in tensors}
        v = {n: tensors[f"adam.v/{n}"] for n in params if f"adam.v/{n}" in tensors}
        if set(m) != set(params) or set(v) != set(params):
            raise CheckpointError(f"{path}: incomplete ADAM state")
        adam = AdamState(m=m, v=v, t=int(adam_t))

    return Checkpoint(config=config, params=params, adam=adam, epoch=epoch, seed=seed)
