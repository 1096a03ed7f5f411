"""Bit-exact persistence: text manifest + little-endian tensor blob.

One file holds a magic/version line, `meta` and `tensor` manifest lines, a
blank separator line, then the raw concatenated tensor bytes. Loading either
returns the complete state or raises; there is no partial load.
"""

from __future__ import annotations

import io

import numpy as np

from .blocks import param
from .vit import VitConfig

CKPT_MAGIC = "VITPCKPT 1"
BACKBONE_MAGIC = "VITPBB 1"
HEAD_MAGIC = "VITPHEAD 1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointFormatError(ValueError):
    pass


def _write_blob(path, magic: str, arrays: dict, meta: dict) -> None:
    header = io.StringIO()
    header.write(magic + "\n")
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in value or "\t" in value:
            raise ValueError(f"meta value for {key!r} may not contain tabs/newlines")
        header.write(f"meta\t{key}\t{value}\n")
    blob = io.BytesIO()
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        dtype_name = str(arr.dtype)
        if dtype_name not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {dtype_name} for {name}")
        raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype_name], copy=False).tobytes()
        shape = ",".join(str(d) for d in arr.shape)
        header.write(f"tensor\t{name}\t{dtype_name}\t{shape}\t{offset}\t{len(raw)}\n")
        blob.write(raw)
        offset += len(raw)
    with open(path, "wb") as f:
        f.write(header.getvalue().encode("utf-8"))
        f.write(b"\n")
        f.write(blob.getvalue())


def _read_blob(path, magic: str):
    with open(path, "rb") as f:
        data = f.read()
    sep = data.find(b"\n\n")
    if sep < 0:
        raise CheckpointFormatError("missing header/blob separator")
    try:
        header = data[:sep].decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointFormatError(f"undecodable header: {e}") from e
    blob = data[sep + 2:]
    lines = header.split("\n")
    if not lines or lines[0] != magic:
        raise CheckpointFormatError(f"bad magic: expected {magic!r}, got {lines[0]!r}")
    meta = {}
    arrays = {}
    for ln in lines[1:]:
        parts = ln.split("\t")
        if parts[0] == "meta":
            if len(parts) != 3:
                raise CheckpointFormatError(f"malformed meta line: {ln!r}")
            meta[parts[1]] = parts[2]
        elif parts[0] == "tensor":
            if len(parts) != 6:
                raise CheckpointFormatError(f"malformed tensor line: {ln!r}")
            _, name, dtype_name, shape_s, off_s, nbytes_s = parts
            if dtype_name not in _DTYPES:
                raise CheckpointFormatError(f"unknown dtype {dtype_name!r}")
            shape = tuple(int(d) for d in shape_s.split(",") if d != "")
            off, nbytes = int(off_s), int(nbytes_s)
            if off + nbytes > len(blob):
                raise CheckpointFormatError(f"tensor {name} extends past end of blob")
            arr = np.frombuffer(blob, dtype=_DTYPES[dtype_name], count=max(
                nbytes // np.dtype(_DTYPES[dtype_name]).itemsize, 0), offset=off)
            expected = int(np.prod(shape)) if shape else 1
            if arr.size != expected:
                raise CheckpointFormatError(f"tensor {name} size mismatch")
            arrays[name] = arr.reshape(shape).astype(dtype_name)
        else:
            raise CheckpointFormatError(f"unknown manifest record: {ln!r}")
    return arrays, meta


def save_checkpoint(path, params: dict, opt_state, meta: dict) -> None:
    arrays = {name: p.data for name, p in params.items()}
    for name, m in opt_state.m.items():
        arrays[f"opt.m/{name}"] = m
    for name, v in opt_state.v.items():
        arrays[f"opt.v/{name}"] = v
    meta = dict(meta)
    meta["opt_step"] = opt_state.step
    _write_blob(path, CKPT_MAGIC, arrays, meta)


def load_checkpoint(path):
    """Returns (param arrays, opt m arrays, opt v arrays, opt step, meta)."""
    arrays, meta = _read_blob(path, CKPT_MAGIC)
    params = {}
    opt_m = {}
    opt_v = {}
    for name, arr in arrays.items():
        if name.startswith("opt.m/"):
            opt_m[name[len("opt.m/"):]] = arr
        elif name.startswith("opt.v/"):
            opt_v[name[len("opt.v/"):]] = arr
        else:
            params[name] = arr
    return params, opt_m, opt_v, int(meta.get("opt_step", 0)), meta


def export_backbone(path, params: dict, vit_cfg: VitConfig, image_hw) -> None:
    """Vision-encoder weights only, enough to rebuild encode() bit-exactly."""
    arrays = {n: p.data for n, p in params.items() if n.startswith("vit.")}
    if not arrays:
        raise ValueError("no vision-encoder parameters to export")
    meta = {
        "patch_size": vit_cfg.patch_size,
        "embed_dim": vit_cfg.embed_dim,
        "depth": vit_cfg.depth,
        "heads": vit_cfg.heads,
        "include_cls": int(vit_cfg.include_cls),
        "image_h": image_hw[0],
        "image_w": image_hw[1],
    }
    _write_blob(path, BACKBONE_MAGIC, arrays, meta)


def save_head(path, head_params: dict, meta: dict) -> None:
    _write_blob(path, HEAD_MAGIC, {n: p.data for n, p in head_params.items()}, meta)


def load_head(path):
    """Returns (head params dict of trainable Tensors, meta)."""
    arrays, meta = _read_blob(path, HEAD_MAGIC)
    return {name: param(arr, dtype=arr.dtype) for name, arr in arrays.items()}, meta


def load_backbone(path):
    """Returns (params dict of trainable Tensors, VitConfig, image_hw)."""
    arrays, meta = _read_blob(path, BACKBONE_MAGIC)
    try:
        cfg = VitConfig(patch_size=int(meta["patch_size"]),
                        embed_dim=int(meta["embed_dim"]),
                        depth=int(meta["depth"]),
                        heads=int(meta["heads"]),
                        include_cls=bool(int(meta["include_cls"])))
        image_hw = (int(meta["image_h"]), int(meta["image_w"]))
    except KeyError as e:
        raise CheckpointFormatError(f"backbone meta missing {e}") from e
    params = {name: param(arr, dtype=arr.dtype) for name, arr in arrays.items()}
    return params, cfg, image_hw
