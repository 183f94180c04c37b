"""Pseudo-anomaly synthesis: transform a labeled anomalous image, then paste
the transformed anomalous region onto a normal image.

Geometric transforms (flip, rotate, transpose, translate, distortion) move
the mask along with the image (nearest-neighbor resampling keeps it binary);
photometric ones (noise, brightness, sharpness, blur) touch pixels only.
"""

import numpy as np
from PIL import Image, ImageEnhance, ImageFilter

from .errors import ExportInputError


def _to_pil(img):
    return Image.fromarray(img)


def _affine(img, mask, coeffs):
    h, w = mask.shape
    out_img = _to_pil(img).transform((w, h), Image.AFFINE, coeffs, resample=Image.BILINEAR)
    out_mask = _to_pil(mask * 255).transform((w, h), Image.AFFINE, coeffs, resample=Image.NEAREST)
    return np.asarray(out_img), (np.asarray(out_mask) > 127).astype(np.uint8)


def _t_flip(img, mask, rng):
    return np.fliplr(img).copy(), np.fliplr(mask).copy()


def _t_transpose(img, mask, rng):
    if img.shape[0] != img.shape[1]:  # transpose only keeps alignment when square
        return img, mask
    return np.transpose(img, (1, 0, 2)).copy(), mask.T.copy()


def _t_rotate(img, mask, rng):
    angle = float(rng.uniform(-30.0, 30.0))
    h, w = mask.shape
    out_img = _to_pil(img).rotate(angle, resample=Image.BILINEAR, expand=False, fillcolor=0)
    out_mask = _to_pil(mask * 255).rotate(angle, resample=Image.NEAREST, expand=False, fillcolor=0)
    return np.asarray(out_img), (np.asarray(out_mask) > 127).astype(np.uint8)


def _t_translate(img, mask, rng):
    h, w = mask.shape
    dx = int(rng.integers(-w // 5, w // 5 + 1))
    dy = int(rng.integers(-h // 5, h // 5 + 1))
    return _affine(img, mask, (1, 0, -dx, 0, 1, -dy))


def _t_distortion(img, mask, rng):
    shear = float(rng.uniform(-0.2, 0.2))
    return _affine(img, mask, (1, shear, 0, 0, 1, 0))


def _t_noise(img, mask, rng):
    sigma = float(rng.uniform(2.0, 10.0))
    noisy = img.astype(np.float64) + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(noisy, 0, 255).astype(np.uint8), mask


def _t_brightness(img, mask, rng):
    factor = float(rng.uniform(0.7, 1.3))
    return np.asarray(ImageEnhance.Brightness(_to_pil(img)).enhance(factor)), mask


def _t_sharpness(img, mask, rng):
    factor = float(rng.uniform(0.5, 2.0))
    return np.asarray(ImageEnhance.Sharpness(_to_pil(img)).enhance(factor)), mask


def _t_blur(img, mask, rng):
    radius = float(rng.uniform(0.5, 2.0))
    return np.asarray(_to_pil(img).filter(ImageFilter.GaussianBlur(radius))), mask


TRANSFORMS = {
    "flip": _t_flip,
    "rotate": _t_rotate,
    "transpose": _t_transpose,
    "noise": _t_noise,
    "distortion": _t_distortion,
    "brightness": _t_brightness,
    "sharpness": _t_sharpness,
    "translate": _t_translate,
    "blur": _t_blur,
}


def apply_transforms(img, mask, names, rng):
    """Apply the named transforms in order; returns (image, mask) copies."""
    out_img, out_mask = img.copy(), mask.copy()
    for name in names:
        if name not in TRANSFORMS:
            raise ExportInputError(f"unknown transform {name!r}")
        out_img, out_mask = TRANSFORMS[name](out_img, out_mask, rng)
    return out_img, out_mask


def make_pseudo_anomaly(anom_img, anom_mask, normal_img, rng, transforms=None):
    """Composite a transformed anomalous region onto a normal image.

    `transforms` pins the subset explicitly (empty list = identity paste);
    when None, 1-3 transforms are drawn uniformly without replacement.
    Returns (pseudo_image, pseudo_mask).
    """
    anom_img = np.asarray(anom_img, dtype=np.uint8)
    normal_img = np.asarray(normal_img, dtype=np.uint8)
    anom_mask = np.asarray(anom_mask, dtype=np.uint8)
    if anom_mask.sum() == 0:
        raise ExportInputError("anomalous mask has no positive pixels")
    if anom_img.shape != normal_img.shape or anom_img.shape[:2] != anom_mask.shape:
        raise ExportInputError("images and mask must share the same size")

    if transforms is None:
        k = int(rng.integers(1, 4))
        names = list(rng.choice(sorted(TRANSFORMS), size=k, replace=False))
    else:
        names = list(transforms)

    timg, tmask = apply_transforms(anom_img, anom_mask, names, rng)
    pseudo = normal_img.copy()
    pseudo[tmask == 1] = timg[tmask == 1]
    return pseudo, tmask
