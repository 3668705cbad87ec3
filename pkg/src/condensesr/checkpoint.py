"""Versioned binary checkpoints with named tensors.

Byte layout (all integers little-endian):

    offset 0   magic, 8 bytes: b"CSRCHKPT"
    +8         format version, u32 (currently 1)
    +12        meta length, u32, then that many bytes of UTF-8 text:
               one "key=value" per line holding the model config, the
               train schedule (keys prefixed "schedule.") and the run seed
    ...        completed epochs, u64
    ...        global optimizer step, u64
    ...        Adam step counter t, u64
    ...        record count, u32
    ...        records, each:
                   name length, u16; name, UTF-8
                   dtype code, u8 (0 = float32, 1 = float64, 2 = int64)
                   ndim, u8; then ndim dimension sizes, u32 each
                   raw element bytes, little-endian, C order

Records hold every model parameter, each condensing layer's mask and stage
("<layer>.mask", "<layer>.stage"), and Adam moments ("adam.m.<param>",
"adam.v.<param>"). Saving a freshly loaded checkpoint reproduces the file
byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import Model, ModelConfig, build_model
from .training import Adam, TrainSchedule

MAGIC = b"CSRCHKPT"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


def _format_value(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _meta_text(config: ModelConfig, schedule: TrainSchedule, seed: int) -> str:
    lines = [f"{k}={_format_value(v)}" for k, v in config.to_dict().items()]
    lines += [f"schedule.{k}={_format_value(v)}" for k, v in schedule.to_dict().items()]
    lines.append(f"seed={seed}")
    return "\n".join(lines) + "\n"


def _parse_meta(text: str):
    config_kv, schedule_kv = {}, {}
    seed = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, raw = line.partition("=")
        if key == "seed":
            seed = int(raw)
        elif key.startswith("schedule."):
            schedule_kv[key[len("schedule."):]] = _parse_value(raw)
        else:
            config_kv[key] = _parse_value(raw)
    return ModelConfig.from_dict(config_kv), TrainSchedule.from_dict(schedule_kv), seed


def _write_record(out: bytearray, name: str, array: np.ndarray) -> None:
    arr = np.asarray(array)  # keep 0-d scalars 0-d
    if arr.dtype == np.int64:
        arr = arr.astype("<i8", copy=False)
    elif arr.dtype == np.float64:
        arr = arr.astype("<f8", copy=False)
    else:
        arr = arr.astype("<f4", copy=False)
    code = _DTYPE_CODES[arr.dtype]
    encoded = name.encode("utf-8")
    out += struct.pack("<H", len(encoded))
    out += encoded
    out += struct.pack("<BB", code, arr.ndim)
    for dim in arr.shape:
        out += struct.pack("<I", dim)
    out += arr.tobytes(order="C")


def checkpoint_bytes(model: Model, optimizer: Adam, schedule: TrainSchedule,
                     seed: int, epoch: int, global_step: int) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    meta = _meta_text(model.config, schedule, seed).encode("utf-8")
    out += struct.pack("<I", len(meta))
    out += meta
    out += struct.pack("<QQQ", epoch, global_step, optimizer.t)

    records = []
    params = model.named_parameters()
    for name, tensor in params.items():
        records.append((name, tensor.data))
    for name, layer in model.lgc_layers():
        records.append((f"{name}.mask", layer.mask))
        records.append((f"{name}.stage", np.array(layer.stage, dtype=np.int64)))
    for name in params:
        records.append((f"adam.m.{name}", optimizer.m[name]))
        records.append((f"adam.v.{name}", optimizer.v[name]))

    out += struct.pack("<I", len(records))
    for name, array in records:
        _write_record(out, name, array)
    return bytes(out)


def save_checkpoint(path, model: Model, optimizer: Adam, schedule: TrainSchedule,
                    seed: int, epoch: int, global_step: int) -> None:
    data = checkpoint_bytes(model, optimizer, schedule, seed, epoch, global_step)
    with open(path, "wb") as fh:
        fh.write(data)


@dataclass
class LoadedCheckpoint:
    config: ModelConfig
    schedule: TrainSchedule
    seed: int
    epoch: int
    global_step: int
    adam_t: int
    arrays: dict


def load_checkpoint(path) -> LoadedCheckpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ConfigError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, 12)
    pos = 16
    config, schedule, seed = _parse_meta(blob[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    epoch, global_step, adam_t = struct.unpack_from("<QQQ", blob, pos)
    pos += 24
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4

    arrays: dict = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, pos) if ndim else ()
        pos += 4 * ndim
        dtype = _CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        arrays[name] = np.frombuffer(blob[pos:pos + n_bytes], dtype=dtype).reshape(shape).copy()
        pos += n_bytes
    if pos != len(blob):
        raise ConfigError(f"trailing bytes in checkpoint {path}")
    return LoadedCheckpoint(config, schedule, seed, epoch, global_step, adam_t, arrays)


def restore_model(loaded: LoadedCheckpoint) -> Model:
    """Rebuild the model and overwrite every parameter, mask and stage."""
    model = build_model(loaded.config, seed=0)
    for name, tensor in model.named_parameters().items():
        saved = loaded.arrays.get(name)
        if saved is None:
            raise ConfigError(f"checkpoint missing parameter {name}")
        if saved.shape != tensor.data.shape:
            raise ConfigError(
                f"checkpoint parameter {name} has shape {saved.shape}, expected {tensor.data.shape}"
            )
        tensor.data = saved.astype(tensor.data.dtype, copy=True)
    for name, layer in model.lgc_layers():
        layer.mask = loaded.arrays[f"{name}.mask"].astype(layer.weight.data.dtype, copy=True)
        layer.stage = int(loaded.arrays[f"{name}.stage"])
    return model


def restore_training(loaded: LoadedCheckpoint):
    """Model plus optimizer with restored moments, ready to resume."""
    model = restore_model(loaded)
    optimizer = Adam(model.named_parameters())
    optimizer.t = loaded.adam_t
    for name in optimizer.params:
        optimizer.m[name] = loaded.arrays[f"adam.m.{name}"].astype(optimizer.m[name].dtype, copy=True)
        optimizer.v[name] = loaded.arrays[f"adam.v.{name}"].astype(optimizer.v[name].dtype, copy=True)
    return model, optimizer
