"""HDR image files: PFM for 1 and 3 channels, a planar PFM variant for Mu
buffers, 8-bit PNG previews and JSON metadata sidecars."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

GAMMA = 2.2
_HEADER = re.compile(rb"(PF|Pf|PM)\s+(\d+)\s+(\d+)\s+(?:(\d+)\s+)?([-+0-9.eE]+)\s")


@dataclass
class ImageBuffer:
    data: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or data.shape[-1] not in (1, 3, 15):
            raise ValueError(f"images need 1, 3 or 15 channels, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        self.data = data

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


def write_pfm(path, image):
    """Little-endian PFM, rows stored bottom to top. 15-channel data goes to
    the planar ``PM`` variant with an explicit channel count."""
    data = np.asarray(image, dtype=np.float32)
    if data.ndim == 2:
        data = data[..., None]
    h, w, c = data.shape
    flipped = data[::-1]
    if c == 3:
        header = f"PF\n{w} {h}\n-1.0\n"
        payload = flipped
    elif c == 1:
        header = f"Pf\n{w} {h}\n-1.0\n"
        payload = flipped[..., 0]
    else:
        header = f"PM\n{w} {h} {c}\n-1.0\n"
        payload = np.moveaxis(flipped, -1, 0)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())


def read_pfm(path):
    """Inverse of :func:`write_pfm`; returns ``(H, W, C)`` float32."""
    raw = Path(path).read_bytes()
    m = _HEADER.match(raw)
    if m is None:
        raise ValueError(f"{path}: not a PFM file")
    kind, w, h = m.group(1), int(m.group(2)), int(m.group(3))
    c = {b"PF": 3, b"Pf": 1}.get(kind) or int(m.group(4))
    scale = float(m.group(5))
    dtype = "<f4" if scale < 0 else ">f4"
    body = raw[m.end():]
    if len(body) != 4 * w * h * c:
        raise ValueError(f"{path}: expected {w * h * c} floats, found {len(body) // 4}")
    arr = np.frombuffer(body, dtype=dtype).astype(np.float32)
    if kind == b"PM":
        arr = np.moveaxis(arr.reshape(c, h, w), 0, -1)
    else:
        arr = arr.reshape(h, w, c)
    return np.ascontiguousarray(arr[::-1])


def tonemap(image, exposure=0.0, gamma=GAMMA):
    """Exposure in stops, clamp to [0, 1], then gamma; returns uint8."""
    scaled = np.clip(np.asarray(image, dtype=np.float64) * 2.0 ** exposure, 0.0, 1.0)
    return np.round(255.0 * scaled ** (1.0 / gamma)).astype(np.uint8)


def write_png(path, image, exposure=0.0, gamma=GAMMA):
    data = np.asarray(image)
    if data.ndim == 3 and data.shape[-1] == 1:
        data = data[..., 0]
    Image.fromarray(tonemap(data, exposure, gamma)).save(path, format="PNG")


def write_metadata(path, metadata):
    Path(path).write_text(json.dumps(metadata, sort_keys=True, indent=2) + "\n")


def save_image(stem, buffer, exposure=0.0, png=True):
    """Write ``stem.pfm``, ``stem.json`` and (for 1 or 3 channels) ``stem.png``."""
    stem = Path(stem)
    write_pfm(stem.with_suffix(".pfm"), buffer.data)
    meta = dict(buffer.metadata, width=buffer.width, height=buffer.height,
                channels=buffer.channels)
    if png and buffer.channels in (1, 3):
        write_png(stem.with_suffix(".png"), buffer.data, exposure)
        meta.update(exposure=exposure, gamma=GAMMA)
    write_metadata(stem.with_suffix(".json"), meta)
    return stem.with_suffix(".pfm")
