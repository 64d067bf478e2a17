"""Binary complex-matrix files: 8-byte magic, little-endian uint32 dims,
then row-major complex128 payload."""

import numpy as np

MAGIC = b"CXMAT001"


def write_matrix(path, arr):
    arr = np.atleast_2d(np.asarray(arr, dtype=complex))
    if arr.ndim != 2:
        raise ValueError("only 2-d matrices are supported")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(arr.shape, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        dims = np.frombuffer(fh.read(8), dtype="<u4")
        if dims.size != 2:
            raise ValueError(f"{path}: truncated header")
        rows, cols = int(dims[0]), int(dims[1])
        payload = fh.read(rows * cols * 16)
        if len(payload) != rows * cols * 16:
            raise ValueError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype="<c16").reshape(rows, cols).copy()
