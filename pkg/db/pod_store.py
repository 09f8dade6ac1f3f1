import struct
from pathlib import Path

import numpy as np

from core.errors import InvalidParameterError
from models.adr_model import ADRProblem
from models.pod_model import PODHierarchy

MAGIC = b"MFCEPOD1"


def save_pod(hierarchy: PODHierarchy, path) -> Path:
    """
    Write a POD hierarchy as a flat little-endian binary file.

    Layout: magic, q, d_K, len(dims), dims..., basis (column-major float64),
    count of singular values, singular values (float64), stability floor
    (float64).

    Args:
        hierarchy: hierarchy to persist
        path: destination file; parent directories are created

    Returns:
        Path of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    q, d_k = hierarchy.basis.shape
    dims = hierarchy.dims
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack(f"<qqq{len(dims)}q", q, d_k, len(dims), *dims))
        f.write(np.asarray(hierarchy.basis, dtype="<f8").tobytes(order="F"))
        sing = np.asarray(hierarchy.singular_values, dtype="<f8")
        f.write(struct.pack("<q", sing.size))
        f.write(sing.tobytes())
        f.write(struct.pack("<d", hierarchy.stability_floor))
    return path


def load_pod(path, problem: ADRProblem) -> PODHierarchy:
    """
    Read a POD file written by save_pod and attach it to `problem`.

    Raises:
        InvalidParameterError: bad magic, truncated file, or q mismatch
    """
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise InvalidParameterError(f"{path}: not a POD file")
    offset = len(MAGIC)
    try:
        q, d_k, n_dims = struct.unpack_from("<qqq", data, offset)
        offset += 24
        dims = struct.unpack_from(f"<{n_dims}q", data, offset)
        offset += 8 * n_dims
        basis = np.frombuffer(data, dtype="<f8", count=q * d_k, offset=offset)
        offset += 8 * q * d_k
        (n_sing,) = struct.unpack_from("<q", data, offset)
        offset += 8
        sing = np.frombuffer(data, dtype="<f8", count=n_sing, offset=offset)
        offset += 8 * n_sing
        (floor,) = struct.unpack_from("<d", data, offset)
    except (struct.error, ValueError) as e:
        raise InvalidParameterError(f"{path}: truncated POD file") from e
    if offset + 8 != len(data):
        raise InvalidParameterError(f"{path}: trailing bytes after POD payload")
    if q != problem.q:
        raise InvalidParameterError(f"{path}: basis has q={q}, problem has q={problem.q}")
    basis = basis.reshape((q, d_k), order="F").astype(np.float64)
    return PODHierarchy.from_basis(problem, basis, dims, floor, sing.astype(np.float64))
