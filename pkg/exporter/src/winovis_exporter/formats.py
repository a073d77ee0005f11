"""Writer (and checking reader) for the engine's WVHM / WVAS containers.

Implemented independently against the documented byte layout so the files
this exporter emits genuinely exercise the engine's parsers:

    magic[4] | version u16 LE | header_len u32 LE | UTF-8 JSON header | payload

Payload grids are row-major little-endian float32. WVHM holds one
width x height grid per token, in token order; WVAS holds, for each slice
in header order, one grid_w x grid_h grid per token. Headers are written
as canonical JSON (sorted keys, no spaces).
"""
from __future__ import annotations

import io
import json
import os
import struct

import numpy as np


class FormatError(ValueError):
    pass


def _header_bytes(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack_bundle(instance_id: str, width: int, height: int, tokens, caption_flag: bool,
                roles: dict, grids) -> bytes:
    """Assemble WVHM bytes from float arrays shaped (height, width)."""
    grids = [np.asarray(g) for g in grids]
    if len(grids) != len(tokens):
        raise FormatError("one grid per token required")
    for g in grids:
        if g.shape != (height, width):
            raise FormatError(f"grid shape {g.shape} does not match {height}x{width}")
    header = _header_bytes({
        "caption_flag": bool(caption_flag),
        "height": height,
        "instance_id": instance_id,
        "roles": dict(roles),
        "tokens": list(tokens),
        "width": width,
    })
    buf = io.BytesIO()
    buf.write(b"WVHM")
    buf.write(struct.pack("<HI", 1, len(header)))
    buf.write(header)
    for g in grids:
        buf.write(g.astype("<f4").tobytes(order="C"))
    return buf.getvalue()


def pack_stack(instance_id: str, tokens, slices) -> bytes:
    """Assemble WVAS bytes.

    ``slices`` is a list of (pathway, timestep, layer, head, grids) where
    grids is float array (n_tokens, grid_h, grid_w). Slices are written in
    sorted key order.
    """
    ordered = sorted(slices, key=lambda s: (s[0], s[1], s[2], s[3]))
    records = []
    for pathway, timestep, layer, head, grids in ordered:
        grids = np.asarray(grids)
        if grids.shape[0] != len(tokens):
            raise FormatError("one grid per token required in every slice")
        records.append({
            "grid_h": int(grids.shape[1]),
            "grid_w": int(grids.shape[2]),
            "head": int(head),
            "layer": int(layer),
            "pathway": pathway,
            "timestep": int(timestep),
        })
    header = _header_bytes({
        "instance_id": instance_id,
        "slices": records,
        "tokens": list(tokens),
    })
    buf = io.BytesIO()
    buf.write(b"WVAS")
    buf.write(struct.pack("<HI", 1, len(header)))
    buf.write(header)
    for _, _, _, _, grids in ordered:
        buf.write(np.asarray(grids).astype("<f4").tobytes(order="C"))
    return buf.getvalue()


def _split(data: bytes, magic: bytes):
    if len(data) < 10 or data[:4] != magic:
        raise FormatError(f"not a {magic.decode()} file")
    version, header_len = struct.unpack("<HI", data[4:10])
    if version != 1:
        raise FormatError(f"unsupported version {version}")
    if 10 + header_len > len(data):
        raise FormatError("header exceeds file")
    header = json.loads(data[10:10 + header_len].decode("utf-8"))
    return header, data[10 + header_len:]


def unpack_bundle(data: bytes):
    """(header dict, list of float64 grids), verifying length arithmetic."""
    header, payload = _split(data, b"WVHM")
    w, h = header["width"], header["height"]
    n = len(header["tokens"])
    if len(payload) != n * w * h * 4:
        raise FormatError("payload length mismatch")
    grids = [
        np.frombuffer(payload[k * w * h * 4:(k + 1) * w * h * 4], dtype="<f4")
        .astype(np.float64).reshape(h, w)
        for k in range(n)
    ]
    return header, grids


def unpack_stack(data: bytes):
    """(header dict, list of (pathway, t, layer, head, grids))."""
    header, payload = _split(data, b"WVAS")
    n = len(header["tokens"])
    slices = []
    offset = 0
    for rec in header["slices"]:
        w, h = rec["grid_w"], rec["grid_h"]
        size = n * w * h * 4
        grids = np.frombuffer(payload[offset:offset + size], dtype="<f4") \
            .astype(np.float64).reshape(n, h, w)
        slices.append((rec["pathway"], rec["timestep"], rec["layer"], rec["head"], grids))
        offset += size
    if offset != len(payload):
        raise FormatError("payload length mismatch")
    return header, slices


def atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.part.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
