"""Self-describing binary container for grid fields.

Layout (documented in docs/formats.md): an 8-byte magic ``TFLD0001``, a
little-endian uint64 header length, a UTF-8 JSON header carrying the model
descriptor and array metadata, then the raw C-order (row-major, node-major)
array bytes.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidGrid
from .geometry import (BasicScalarField, BasicVectorField, ConnectionField,
                       FoliationModel, GeometryKind, SphereGridSpec,
                       TorusGridSpec, TransverseMetricField, build_model)

MAGIC = b"TFLD0001"

_FIELD_KINDS = {
    "scalar": BasicScalarField,
    "vector": BasicVectorField,
    "metric": TransverseMetricField,
    "connection": ConnectionField,
}


def _model_descriptor(model: FoliationModel) -> dict:
    if model.kind is GeometryKind.PERIODIC_TORUS:
        grid = {"nodes": list(model.grid.nodes), "periods": list(model.grid.periods)}
    else:
        grid = {"latitude_nodes": model.grid.latitude_nodes, "margin": model.grid.margin}
    return {
        "kind": model.kind.value,
        "leaf_dim": model.leaf_dim,
        "codim": model.codim,
        "grid": grid,
        "leaf_volume": model.leaf_volume,
    }


def _model_from_descriptor(desc: dict) -> FoliationModel:
    kind = GeometryKind(desc["kind"])
    if kind is GeometryKind.PERIODIC_TORUS:
        spec = TorusGridSpec(tuple(desc["grid"]["nodes"]), tuple(desc["grid"]["periods"]))
    else:
        spec = SphereGridSpec(desc["grid"]["latitude_nodes"], desc["grid"]["margin"])
    return build_model(kind, spec, desc["leaf_volume"], desc["leaf_dim"])


def _field_payload(fld) -> tuple[str, np.ndarray]:
    for name, cls in _FIELD_KINDS.items():
        if isinstance(fld, cls):
            arr = fld.values if name == "scalar" else (
                fld.gamma if name == "connection" else fld.comps)
            return name, np.ascontiguousarray(arr)
    raise InvalidGrid(f"unsupported field type {type(fld).__name__}")


def save_field(path: str | Path, fld) -> None:
    """Write a grid field with its model descriptor to a binary container."""
    kind, arr = _field_payload(fld)
    header = {
        "format": "tfld",
        "version": 1,
        "model": _model_descriptor(fld.model),
        "field_kind": kind,
        "dtype": arr.dtype.str,
        "shape": list(arr.shape),
        "layout": "row-major, node-major",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes(order="C"))


def load_field(path: str | Path):
    """Read a field container back; reconstructs the model from the header."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise InvalidGrid(f"not a field container: bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        raw = fh.read()
    model = _model_from_descriptor(header["model"])
    arr = np.frombuffer(raw, dtype=np.dtype(header["dtype"]))
    arr = arr.reshape(header["shape"]).copy()
    kind = header["field_kind"]
    if kind == "scalar":
        return BasicScalarField(model, arr)
    if kind == "vector":
        return BasicVectorField(model, arr)
    if kind == "metric":
        return TransverseMetricField(model, arr)
    if kind == "connection":
        return ConnectionField(model, arr)
    raise InvalidGrid(f"unknown field kind {kind!r}")
