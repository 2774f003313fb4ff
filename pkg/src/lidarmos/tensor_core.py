"""Small deterministic dense-tensor kernels (no autodiff).

Tensors are plain ``numpy`` arrays in channel-first layout (``C x H x W``).
Arithmetic runs in float64; persisted tensors (weight blobs) are float32.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError, IoError, ShapeError


def _as3d(x, name="input") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"{name} must be C x H x W, got shape {x.shape}")
    return x


def conv2d(x, kernel, bias=None) -> np.ndarray:
    """Stride-1 cross-correlation with zero padding that keeps ``H x W``.

    ``kernel`` is ``C_out x C_in x k x k`` with ``k`` in {1, 3}.
    """
    x = _as3d(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3] or kernel.shape[2] not in (1, 3):
        raise ShapeError(f"kernel must be C_out x C_in x k x k with k in (1, 3), got {kernel.shape}")
    c_out, c_in, k, _ = kernel.shape
    if c_in != x.shape[0]:
        raise ShapeError(f"kernel expects {c_in} input channels, input has {x.shape[0]}")
    b = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64)
    if b.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {b.shape}")
    _, h, w = x.shape
    if k == 1:
        out = np.tensordot(kernel[:, :, 0, 0], x, axes=(1, 0))
    else:
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        out = np.zeros((c_out, h, w))
        for dy in range(3):
            for dx in range(3):
                out += np.tensordot(kernel[:, :, dy, dx], xp[:, dy:dy + h, dx:dx + w], axes=(1, 0))
    return out + b[:, None, None]


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def channel_softmax(x, axis: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        raise ShapeError("softmax needs a channel axis")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def activation(x, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "channel_softmax":
        return channel_softmax(x)
    raise ValueError(f"unknown activation {kind!r}")


def max_pool2x2(x) -> np.ndarray:
    x = _as3d(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2x2 needs even spatial dims, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def global_avg_pool(x) -> np.ndarray:
    """``C x H x W`` -> ``C x 1 x 1``."""
    x = _as3d(x)
    return x.mean(axis=(1, 2), keepdims=True)


def pool(x, kind: str) -> np.ndarray:
    if kind == "max2x2":
        return max_pool2x2(x)
    if kind == "global_avg":
        return global_avg_pool(x)
    raise ValueError(f"unknown pool {kind!r}")


def normalize_coords(px, py, width: int, height: int):
    """Pixel-centre coordinates -> ``[-1, 1]`` (``align_corners=False`` convention)."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    return (2.0 * px + 1.0) / width - 1.0, (2.0 * py + 1.0) / height - 1.0


def bilinear_sample(src, coords) -> np.ndarray:
    """Sample ``src`` (``C x H x W``) at normalised ``coords`` (``2 x H' x W'``,
    row 0 = x/width, row 1 = y/height).

    Four-neighbour interpolation; neighbours outside the image contribute zero.
    """
    src = _as3d(src, "src")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 3 or coords.shape[0] != 2:
        raise ShapeError(f"coords must be 2 x H' x W', got {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise ShapeError("coords must be finite")
    c, h, w = src.shape
    fx = ((coords[0] + 1.0) * w - 1.0) / 2.0
    fy = ((coords[1] + 1.0) * h - 1.0) / 2.0
    x0 = np.floor(fx)
    y0 = np.floor(fy)
    tx = fx - x0
    ty = fy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros((c,) + coords.shape[1:])
    for oy, wy in ((0, 1.0 - ty), (1, ty)):
        for ox, wx in ((0, 1.0 - tx), (1, tx)):
            xi, yi = x0 + ox, y0 + oy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = np.where(inside, wx * wy, 0.0)
            vals = src[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += vals * wgt
    return out


def resize_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of ``C x H x W`` with half-pixel centres and edge clamping."""
    x = _as3d(x)
    _, h, w = x.shape

    def axis(n_in, n_out):
        s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        s = np.clip(s, 0.0, None)
        i0 = np.minimum(np.floor(s).astype(np.int64), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        t = s - i0
        return i0, i1, t

    y0, y1, ty = axis(h, out_h)
    x0, x1, tx = axis(w, out_w)
    ty = ty[None, :, None]
    tx = tx[None, None, :]
    top = x[:, y0][:, :, x0] * (1.0 - tx) + x[:, y0][:, :, x1] * tx
    bot = x[:, y1][:, :, x0] * (1.0 - tx) + x[:, y1][:, :, x1] * tx
    return top * (1.0 - ty) + bot * ty


def save_weights(manifest_path, tensors: Mapping[str, np.ndarray], blob_name: str | None = None) -> None:
    """Write ``tensors`` as one little-endian float32 blob plus a JSON manifest."""
    manifest_path = Path(manifest_path)
    blob_name = blob_name or manifest_path.with_suffix(".bin").name
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    (manifest_path.parent / blob_name).write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps({"blob": blob_name, "dtype": "<f4", "tensors": entries}, indent=2))


def load_weights(manifest_path) -> dict[str, np.ndarray]:
    """Read-only float32 tensors keyed by name."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: {exc}") from exc
    entries = manifest.get("tensors", [])
    if not entries:
        return {}
    if manifest.get("dtype", "<f4") != "<f4":
        raise FormatError("only little-endian float32 blobs are supported")
    blob_path = manifest_path.parent / manifest["blob"]
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {blob_path}: {exc}") from exc
    out = {}
    for e in entries:
        shape = tuple(int(s) for s in e["shape"])
        expected = 4 * int(np.prod(shape, dtype=np.int64))
        off, nbytes = int(e["offset"]), int(e["nbytes"])
        if nbytes != expected:
            raise FormatError(f"{e['name']}: shape {shape} needs {expected} bytes, manifest says {nbytes}")
        if off < 0 or off + nbytes > len(blob):
            raise FormatError(f"{e['name']}: bytes [{off}, {off + nbytes}) exceed blob size {len(blob)}")
        arr = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
        out[e["name"]] = arr  # frombuffer over bytes is already read-only
    return out
