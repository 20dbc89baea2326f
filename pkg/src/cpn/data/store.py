"""On-disk dataset layout: ``img_%06d.pgm`` (P5, maxval 255) next to ``img_%06d.json``."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from .synth import LabeledImage

_WS = b" \t\r\n"


class DatasetFormatError(ValueError):
    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path}: byte {offset}: {message}")


def write_pgm(path, pixels: np.ndarray) -> None:
    """Write a [0, 1] float image as an 8-bit binary PGM."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-d image, got {arr.shape}")
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def _token(buf: bytes, pos: int, path) -> tuple[bytes, int]:
    while pos < len(buf):
        if buf[pos] in _WS:
            pos += 1
        elif buf[pos] == ord("#"):
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos] not in _WS:
        pos += 1
    if start == pos:
        raise DatasetFormatError(path, start, "unexpected end of header")
    return buf[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit P5 PGM into floats in [0, 1]."""
    buf = Path(path).read_bytes()
    magic, pos = _token(buf, 0, path)
    if magic != b"P5":
        raise DatasetFormatError(path, 0, f"expected magic P5, found {magic[:8]!r}")
    values = []
    for name in ("width", "height", "maxval"):
        start = pos
        tok, pos = _token(buf, pos, path)
        if not tok.isdigit():
            raise DatasetFormatError(path, start, f"{name} is not a number: {tok[:16]!r}")
        values.append(int(tok))
    w, h, maxval = values
    if maxval != 255:
        raise DatasetFormatError(path, pos, f"maxval {maxval} unsupported, only 255 is accepted")
    if w < 1 or h < 1:
        raise DatasetFormatError(path, pos, "image dimensions must be positive")
    if pos >= len(buf) or buf[pos] not in _WS:
        raise DatasetFormatError(path, pos, "missing whitespace after header")
    pos += 1
    body = buf[pos:]
    if len(body) < w * h:
        raise DatasetFormatError(path, len(buf), f"pixel data truncated: {len(body)} of {w * h} bytes")
    return np.frombuffer(body[: w * h], dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def annotation_dict(img: LabeledImage) -> dict:
    return {
        "width": img.width,
        "height": img.height,
        "instances": [{"polygon": np.asarray(p, dtype=np.float64).tolist()} for p in img.instances],
    }


def read_annotation(path) -> dict:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.pos, exc.msg) from None
    try:
        width, height = int(obj["width"]), int(obj["height"])
        polys = [np.asarray(inst["polygon"], dtype=np.float64).reshape(-1, 2) for inst in obj["instances"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(path, 0, f"bad annotation schema: {exc}") from None
    return {"width": width, "height": height, "instances": polys}


def image_stem(index: int) -> str:
    return f"img_{index:06d}"


def save_dataset(images, directory) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, img in enumerate(images):
        stem = out / image_stem(i)
        write_pgm(stem.with_suffix(".pgm"), img.pixels)
        stem.with_suffix(".json").write_text(json.dumps(annotation_dict(img)))
        written.append(stem.with_suffix(".pgm"))
    return written


def list_stems(directory) -> list[str]:
    names = sorted(os.listdir(directory))
    return [n[:-4] for n in names if re.fullmatch(r"img_\d{6}\.pgm", n)]


def load_dataset(directory) -> list[LabeledImage]:
    base = Path(directory)
    if not base.is_dir():
        raise FileNotFoundError(f"dataset directory {base} does not exist")
    images = []
    for stem in list_stems(base):
        pixels = read_pgm(base / f"{stem}.pgm")
        ann_path = base / f"{stem}.json"
        ann = read_annotation(ann_path)
        if (ann["height"], ann["width"]) != pixels.shape:
            raise DatasetFormatError(ann_path, 0, f"annotation size {ann['width']}x{ann['height']} "
                                                  f"does not match image {pixels.shape[1]}x{pixels.shape[0]}")
        images.append(LabeledImage(pixels, ann["instances"]))
    return images
