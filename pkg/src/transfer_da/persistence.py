"""Versioned binary containers for fitted models.

Layout::

    magic (5 bytes, b"DATO1" or b"QMDA1")
    format version (uint32, little endian)
    header length H (uint32, little endian)
    JSON header (H bytes, UTF-8, sorted keys)
    array payload (little-endian f8 / c16 / i8, concatenated in header order)

The header lists each array's name, dtype, shape and byte offset, plus the
scalar fields of the model.  Serialisation is a pure function of the model, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .dato import DatoModel
from .qmda import Partition, QmdaModel

FORMAT_VERSION = 1
MAGIC_DATO = b"DATO1"
MAGIC_QMDA = b"QMDA1"
_PREFIX = struct.Struct("<5sII")


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedContainerError(ContainerError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"container truncated: expected {expected} bytes, found {actual}")
        self.expected = expected
        self.actual = actual


_DTYPES = {"f8": "<f8", "c16": "<c16", "i8": "<i8"}


def _dtype_code(a: np.ndarray) -> str:
    if np.iscomplexobj(a):
        return "c16"
    if np.issubdtype(a.dtype, np.integer):
        return "i8"
    return "f8"


def _encode(magic: bytes, scalars: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        code = _dtype_code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "scalars": scalars, "payload_bytes": offset}, sort_keys=True).encode()
    return _PREFIX.pack(magic, FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def _decode(blob: bytes, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < _PREFIX.size:
        raise TruncatedContainerError(_PREFIX.size, len(blob))
    got, version, hlen = _PREFIX.unpack_from(blob)
    if got != magic:
        raise BadMagicError(f"bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"container version {version}, this build reads version {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    if len(blob) < start:
        raise TruncatedContainerError(start, len(blob))
    try:
        header = json.loads(blob[_PREFIX.size : start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from exc
    expected = start + int(header["payload_bytes"])
    if len(blob) < expected:
        raise TruncatedContainerError(expected, len(blob))
    if len(blob) > expected:
        raise ContainerError(f"{len(blob) - expected} trailing bytes after payload")
    arrays = {}
    for e in header["arrays"]:
        lo = start + e["offset"]
        a = np.frombuffer(blob[lo : lo + e["nbytes"]], dtype=_DTYPES[e["dtype"]])
        arrays[e["name"]] = a.astype(a.dtype.newbyteorder("="), copy=True).reshape(e["shape"])
    return header["scalars"], arrays


# ---------------------------------------------------------------------------


def dato_to_bytes(model: DatoModel) -> bytes:
    if model.h_map is not None:
        raise ContainerError("models with a custom observation map cannot be serialised")
    scalars = {"sigma": model.sigma, "eps": model.eps, "q": model.q, "selector": list(model.selector)}
    arrays = {
        "X": model.X,
        "lambdas": model.lambdas,
        "Phi": model.Phi,
        "koopman_lambdas": model.koopman_lambdas,
        "V_K": model.V_K,
        "normal_factor": model.normal_factor,
        "koopman_modes": model.koopman_modes,
        "R_inv": model.R_inv,
        "lambda_pow_q": model.lambda_pow_q,
    }
    return _encode(MAGIC_DATO, scalars, arrays)


def dato_from_bytes(blob: bytes) -> DatoModel:
    s, a = _decode(blob, MAGIC_DATO)
    return DatoModel(
        X=a["X"],
        sigma=float(s["sigma"]),
        eps=float(s["eps"]),
        q=int(s["q"]),
        lambdas=a["lambdas"],
        Phi=a["Phi"],
        koopman_lambdas=a["koopman_lambdas"],
        V_K=a["V_K"],
        normal_factor=a["normal_factor"],
        koopman_modes=a["koopman_modes"],
        R_inv=a["R_inv"],
        selector=tuple(int(i) for i in s["selector"]),
        lambda_pow_q=a["lambda_pow_q"],
    )


def qmda_to_bytes(model: QmdaModel) -> bytes:
    scalars = {"q": model.q, "sinkhorn_iterations": model.sinkhorn_iterations, "multi_horizon": model.U_horizons is not None}
    arrays = {
        "basis": model.basis,
        "eigenvalues": model.eigenvalues,
        "U_q": model.U_q,
        "projectors": model.projectors,
        "edges": model.partition.edges,
        "cell_averages": model.partition.cell_averages,
        "membership": model.partition.membership.astype(np.int64),
    }
    if model.U_horizons is not None:
        arrays["U_horizons"] = model.U_horizons
    return _encode(MAGIC_QMDA, scalars, arrays)


def qmda_from_bytes(blob: bytes) -> QmdaModel:
    s, a = _decode(blob, MAGIC_QMDA)
    return QmdaModel(
        basis=a["basis"],
        eigenvalues=a["eigenvalues"],
        U_q=a["U_q"],
        projectors=a["projectors"],
        partition=Partition(a["edges"], a["cell_averages"], a["membership"]),
        q=int(s["q"]),
        U_horizons=a.get("U_horizons"),
        sinkhorn_iterations=int(s["sinkhorn_iterations"]),
    )


def save_model(path, model: DatoModel | QmdaModel) -> Path:
    path = Path(path)
    if isinstance(model, DatoModel):
        blob = dato_to_bytes(model)
    elif isinstance(model, QmdaModel):
        blob = qmda_to_bytes(model)
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    path.write_bytes(blob)
    return path


def load_model(path) -> DatoModel | QmdaModel:
    blob = Path(path).read_bytes()
    head = blob[:5]
    if head == MAGIC_DATO:
        return dato_from_bytes(blob)
    if head == MAGIC_QMDA:
        return qmda_from_bytes(blob)
    raise BadMagicError(f"unrecognised magic {head!r}")
