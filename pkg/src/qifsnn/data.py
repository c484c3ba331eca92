"""Dataset ingestion: IDX binary tensors and synthetic Gaussian blobs."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import MalformedHeader, ShapeMismatch, TruncatedData

# IDX type byte -> big-endian numpy dtype
IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {dt.newbyteorder("=").str[1:]: code for code, dt in IDX_DTYPES.items()}


def parse_idx(buf: bytes) -> np.ndarray:
    # Header: 0x00 0x00 <type byte> <ndim byte>, then ndim big-endian u32 sizes, then data.
    if len(buf) < 4:
        raise MalformedHeader("file shorter than the 4-byte IDX magic")
    zero0, zero1, code, ndim = buf[:4]
    if zero0 or zero1:
        raise MalformedHeader(f"IDX magic must start with two zero bytes, got {buf[:2]!r}")
    if code not in IDX_DTYPES:
        raise MalformedHeader(f"unknown IDX type byte 0x{code:02x}")
    header_len = 4 + 4 * ndim
    if len(buf) < header_len:
        raise TruncatedData(f"header declares {ndim} dimensions but file ends early")
    dims = struct.unpack(f">{ndim}I", buf[4:header_len])
    dtype = IDX_DTYPES[code]
    need = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - header_len < need:
        raise TruncatedData(f"expected {need} data bytes, found {len(buf) - header_len}")
    data = np.frombuffer(buf, dtype=dtype, count=need // dtype.itemsize, offset=header_len)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_idx(fh.read())


def idx_bytes(array) -> bytes:
    array = np.asarray(array)
    key = array.dtype.newbyteorder("=").str[1:]
    if key not in _IDX_CODES:
        raise ValueError(f"dtype {array.dtype} has no IDX type code")
    code = _IDX_CODES[key]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.astype(IDX_DTYPES[code]).tobytes()


def write_idx(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(idx_bytes(array))


@dataclass
class DatasetHandle:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    mean: float | np.ndarray = 0.0
    std: float | np.ndarray = 1.0
    name: str = ""

    @property
    def n_classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max(initial=0))) + 1

    @property
    def input_shape(self) -> tuple:
        return tuple(self.x_train.shape[1:])


def load_idx(train_images, train_labels, test_images, test_labels, normalize=True,
             add_channel=True) -> DatasetHandle:
    """Image/label IDX quadruple to a standardised dataset.

    Images shaped (N, H, W) gain a channel axis; standardisation uses the
    training split's global mean and std.
    """
    xs = [read_idx(p).astype(np.float64) for p in (train_images, test_images)]
    ys = [read_idx(p).astype(np.int64) for p in (train_labels, test_labels)]
    for x, y in zip(xs, ys):
        if len(x) != len(y):
            raise ShapeMismatch(f"{len(x)} images but {len(y)} labels")
    if add_channel and xs[0].ndim == 3:
        xs = [x[:, None] for x in xs]
    mean, std = (float(xs[0].mean()), float(xs[0].std()) or 1.0) if normalize else (0.0, 1.0)
    return DatasetHandle((xs[0] - mean) / std, ys[0], (xs[1] - mean) / std, ys[1], mean, std, name="idx")


def generate_blobs(k: int = 3, n_per_class: int = 200, dim: int = 8, seed: int = 0,
                   separation: float = 4.0, sigma: float = 1.0, test_fraction: float = 0.3) -> DatasetHandle:
    """Isotropic Gaussian clusters whose centres are pairwise ``separation * sigma`` apart.

    Centres are scaled basis vectors under a random rotation, so ``k <= dim``.
    Each class is split into disjoint train/test parts.
    """
    if k > dim:
        raise ValueError(f"need k <= dim for equidistant centres, got k={k}, dim={dim}")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    centres = (separation * sigma / np.sqrt(2.0)) * q[:k]
    x = np.concatenate([c + sigma * rng.standard_normal((n_per_class, dim)) for c in centres])
    y = np.repeat(np.arange(k), n_per_class)
    n_test = int(round(test_fraction * n_per_class))
    is_test = np.zeros(len(y), dtype=bool)
    for cls in range(k):
        members = np.flatnonzero(y == cls)
        is_test[rng.choice(members, size=n_test, replace=False)] = True
    mean, std = x[~is_test].mean(axis=0), x[~is_test].std(axis=0)
    x = (x - mean) / std
    return DatasetHandle(x[~is_test], y[~is_test], x[is_test], y[is_test], mean, std, name="blobs")


def nearest_centroid_accuracy(data: DatasetHandle) -> float:
    classes = np.unique(data.y_train)
    centres = np.stack([data.x_train[data.y_train == c].mean(axis=0) for c in classes])
    d = ((data.x_test[:, None, :] - centres[None]) ** 2).sum(axis=-1)
    return float(np.mean(classes[d.argmin(axis=1)] == data.y_test))


def export_digits_idx(directory, test_fraction: float = 0.25, seed: int = 0) -> dict:
    """Write scikit-learn's 8x8 digits as four IDX files; returns their paths."""
    from pathlib import Path

    from sklearn.datasets import load_digits

    digits = load_digits()
    images = digits.images.astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    n_test = int(round(test_fraction * len(labels)))
    test, train = order[:n_test], order[n_test:]
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_images": directory / "train-images.idx3-ubyte",
        "train_labels": directory / "train-labels.idx1-ubyte",
        "test_images": directory / "test-images.idx3-ubyte",
        "test_labels": directory / "test-labels.idx1-ubyte",
    }
    write_idx(paths["train_images"], images[train])
    write_idx(paths["train_labels"], labels[train])
    write_idx(paths["test_images"], images[test])
    write_idx(paths["test_labels"], labels[test])
    return paths
