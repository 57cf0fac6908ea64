"""Small natural-image set for desk-scale runs, built from scikit-image's bundled samples."""

from __future__ import annotations

import numpy as np
from PIL import Image

COLOR = ("astronaut", "chelsea", "coffee", "rocket", "stereo_motorcycle",
         "retina", "immunohistochemistry", "hubble_deep_field", "colorwheel")
GRAY = ("camera", "brick", "grass", "gravel", "moon", "coins", "page", "text", "clock", "cell")


def _rgb(img):
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    img = img[..., :3]
    if img.dtype != np.uint8:
        img = (np.clip(img.astype(np.float64), 0, 1) * 255 + 0.5).astype(np.uint8) if img.max() <= 1 else img.astype(np.uint8)
    return img


def sample_images(size: int = 96, limit: int = 20) -> list:
    """Up to ``limit`` RGB uint8 images resized so the short side equals ``size``, center cropped square."""
    import skimage.data as sd  # optional dependency, only needed for sample data

    out = []
    for name in COLOR + GRAY:
        loader = getattr(sd, name, None)
        if loader is None:
            continue
        try:
            loaded = loader()
        except Exception:  # some samples need a network fetch
            continue
        # stereo_motorcycle gives (left, right, disparity); keep both views
        views = loaded[:2] if isinstance(loaded, tuple) else (loaded,)
        for view in views:
            out.append(_square(_rgb(view), size))
            if len(out) >= limit:
                return out
    return out


def _square(img, size):
    h, w = img.shape[:2]
    s = min(h, w)
    img = img[(h - s) // 2:(h - s) // 2 + s, (w - s) // 2:(w - s) // 2 + s]
    return np.asarray(Image.fromarray(img).resize((size, size), Image.BICUBIC), dtype=np.uint8)
