"""Reading and writing frame images referenced by an images.txt index."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..dataset_io import atomic_open, parse_images_list, write_images_list
from .core import FrameSequence, rgb_to_luma


def srgb_to_linear(v):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def read_intensity(path, degamma=False) -> np.ndarray:
    """Load an 8/16-bit gray or RGB(A) raster as linear luma in [0, 1]."""
    with Image.open(path) as im:
        mode = im.mode
        a = np.asarray(im)
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        img = a.astype(np.float64) / 65535.0
    elif a.dtype == np.uint8:
        img = a.astype(np.float64) / 255.0
    elif a.dtype == np.uint16:
        img = a.astype(np.float64) / 65535.0
    else:
        raise ValueError(f"unsupported image mode {mode!r} in {path}")
    if img.ndim == 3:
        img = img[..., :3]
        if degamma:
            img = srgb_to_linear(img)
        return rgb_to_luma(img)
    return srgb_to_linear(img) if degamma else img


def write_intensity(path, img, bit_depth=16):
    """Save a [0, 1] intensity image as a grayscale PNG (8 or 16 bit)."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if bit_depth == 16:
        im = Image.fromarray(np.rint(img * 65535.0).astype(np.uint16))
    elif bit_depth == 8:
        im = Image.fromarray(np.rint(img * 255.0).astype(np.uint8))
    else:
        raise ValueError("bit_depth must be 8 or 16")
    with atomic_open(path, "wb") as f:
        im.save(f, format="PNG")


def iter_frames(index_path, degamma=False):
    """Yield ``(t, intensity)`` for each line of an images.txt index.

    File names are resolved relative to the index file's directory.
    """
    root = Path(index_path).parent
    for ref in parse_images_list(index_path):
        yield ref.t, read_intensity(root / ref.filename, degamma)


def load_frames(index_path, degamma=False) -> FrameSequence:
    return FrameSequence.from_pairs(iter_frames(index_path, degamma))


def save_frames(seq: FrameSequence, root, bit_depth=16, subdir="images"):
    """Write ``images/NNNNNNNN.png`` plus ``images.txt`` under ``root``."""
    root = Path(root)
    (root / subdir).mkdir(parents=True, exist_ok=True)
    refs = []
    for k, (t, img) in enumerate(seq):
        name = f"{subdir}/{k:08d}.png"
        write_intensity(root / name, img, bit_depth)
        refs.append((t, name))
    write_images_list(refs, root / "images.txt")
    return refs
