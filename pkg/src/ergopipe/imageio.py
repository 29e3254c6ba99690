"""Image file I/O: 8-bit PNG and binary PGM/PPM."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .core import ImageBuffer

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")


def read_image(path) -> ImageBuffer:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        return ImageBuffer(np.array(im, dtype=np.uint8))


def write_image(path, img: ImageBuffer) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = img.data[:, :, 0] if img.channels == 1 else img.data
    im = Image.fromarray(np.ascontiguousarray(data))
    suffix = path.suffix.lower()
    if suffix == ".pgm" and img.channels != 1:
        raise ValueError("PGM output needs a single-channel image")
    if suffix in (".pgm", ".ppm"):
        im.save(path, format="PPM")
    else:
        im.save(path, format="PNG", optimize=False)


def list_images(directory) -> list[tuple[str, Path]]:
    """(image_id, path) pairs for every supported image below ``directory``, sorted."""
    root = Path(directory)
    out = []
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            out.append((p.relative_to(root).with_suffix("").as_posix(), p))
    return out
