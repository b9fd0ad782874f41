"""File formats: .f32 payloads with JSON sidecars, PCM WAV reading.

A ``.f32`` file is a flat little-endian 32-bit float array. Its JSON
sidecar (same path plus ``.json``) records ``fs``, ``channels`` and
``samples`` plus any extra metadata. Model files reuse the same payload
format with named array segments listed in the header.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .signals import MultiSignal, Signal


def sidecar_path(f32_path) -> Path:
    return Path(str(f32_path) + ".json")


def write_f32(path, data: np.ndarray, fs: float, channels=None, extra: dict | None = None) -> Path:
    """Write a 1-D or 2-D (channels x samples) array as .f32 + sidecar."""
    path = Path(path)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if channels is None:
        channels = [f"ch{i}" for i in range(arr.shape[0])]
    meta = {
        "fs": fs,
        "channels": list(channels),
        "samples": int(arr.shape[1]),
    }
    if extra:
        meta.update(extra)
    arr.astype("<f4").tofile(path)
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_f32(path) -> tuple[np.ndarray, dict]:
    """Read a .f32 + sidecar pair; returns (channels x samples, metadata)."""
    path = Path(path)
    with open(sidecar_path(path)) as fh:
        meta = json.load(fh)
    raw = np.fromfile(path, dtype="<f4").astype(np.float64)
    n_ch, n_samp = len(meta["channels"]), int(meta["samples"])
    if raw.shape[0] != n_ch * n_samp:
        raise ValueError(
            f"{path}: payload has {raw.shape[0]} values, sidecar says {n_ch}x{n_samp}"
        )
    return raw.reshape(n_ch, n_samp), meta


def read_f32_signal(path):
    """Read a .f32 file as a Signal (1 channel) or MultiSignal."""
    data, meta = read_f32(path)
    if data.shape[0] == 1:
        return Signal(data[0], meta["fs"])
    return MultiSignal(meta["channels"], data, meta["fs"])


def read_wav(path):
    """Read a 16/24/32-bit PCM (or float) WAV file, scaled to [-1, 1].

    Mono files come back as a Signal, multichannel as a MultiSignal.
    """
    fs, raw = wavfile.read(path)
    if raw.dtype == np.int16:
        data = raw / 32768.0
    elif raw.dtype == np.int32:
        data = raw / 2147483648.0
    elif raw.dtype == np.uint8:
        data = (raw.astype(np.float64) - 128.0) / 128.0
    else:
        data = raw.astype(np.float64)
    if data.ndim == 1:
        return Signal(data, float(fs))
    return MultiSignal(
        [f"ch{i}" for i in range(data.shape[1])], data.T, float(fs)
    )


def file_digest(path) -> str:
    """SHA-256 hex digest of a file, for feature provenance sidecars."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def save_payload(path, header: dict, arrays: dict[str, np.ndarray]) -> Path:
    """Save named arrays into one .f32 payload with a JSON header.

    The header gains a ``payload`` section mapping each array name to
    its offset (in floats) and shape.
    """
    path = Path(path)
    layout = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        layout[name] = {"offset": offset, "shape": list(arr.shape)}
        chunks.append(arr.ravel())
        offset += arr.size
    header = dict(header)
    header["payload"] = layout
    np.concatenate(chunks).astype("<f4").tofile(path)
    with open(sidecar_path(path), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_payload(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of :func:`save_payload`."""
    path = Path(path)
    with open(sidecar_path(path)) as fh:
        header = json.load(fh)
    raw = np.fromfile(path, dtype="<f4").astype(np.float64)
    arrays = {}
    for name, loc in header["payload"].items():
        shape = tuple(loc["shape"])
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = raw[loc["offset"] : loc["offset"] + size].reshape(shape)
    return header, arrays
