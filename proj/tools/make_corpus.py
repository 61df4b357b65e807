#!/usr/bin/env python3
"""Builds the demo corpus from images bundled with scikit-image, scikit-learn
and matplotlib.

Multi-focus pairs are synthetic: each source is blurred outside a soft disc in
one image and inside it in the other. Colour pairs join two photographs of
different subjects.
"""

import argparse
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

import matplotlib.cbook
import skimage.data
from sklearn.datasets import load_sample_image

GRAY_SIDE = 128
COLOUR_SIDE = 160
BLUR_SIGMA = 2.5

GRAY_SOURCES = ["camera", "moon", "coins", "brick", "gravel", "text"]


def colour_source(name):
    if name in ("china", "flower"):
        return load_sample_image(name + ".jpg")
    if name == "grace_hopper":
        with matplotlib.cbook.get_sample_data("grace_hopper.jpg") as f:
            return np.asarray(Image.open(f).convert("RGB"))
    return getattr(skimage.data, name)()


COLOUR_PAIRS = [
    ("astronaut", "coffee"),
    ("chelsea", "rocket"),
    ("china", "flower"),
    ("grace_hopper", "hubble_deep_field"),
]


def square(image, side):
    h, w = image.shape[:2]
    s = min(h, w)
    y, x = (h - s) // 2, (w - s) // 2
    crop = Image.fromarray(image[y:y + s, x:x + s])
    return np.asarray(crop.resize((side, side), Image.BICUBIC)).astype(np.float64) / 255.0


def focus_mask(side):
    yy, xx = np.mgrid[0:side, 0:side]
    r = np.hypot(yy - side * 0.45, xx - side * 0.55)
    return gaussian_filter((r < side * 0.3).astype(np.float64), 2.0)


def save(path, values):
    data = np.clip(np.floor(values * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", type=Path, nargs="?", default=Path(__file__).resolve().parent.parent / "corpus")
    args = parser.parse_args()
    (args.out / "reference").mkdir(parents=True, exist_ok=True)

    mask = focus_mask(GRAY_SIDE)
    for name in GRAY_SOURCES:
        sharp = square(getattr(skimage.data, name)(), GRAY_SIDE)
        blurred = gaussian_filter(sharp, BLUR_SIGMA, mode="nearest")
        save(args.out / f"mf_{name}_a.png", mask * sharp + (1 - mask) * blurred)
        save(args.out / f"mf_{name}_b.png", (1 - mask) * sharp + mask * blurred)
        save(args.out / "reference" / f"{name}.png", sharp)

    for first, second in COLOUR_PAIRS:
        save(args.out / f"rgb_{first}_{second}_a.png", square(colour_source(first), COLOUR_SIDE))
        save(args.out / f"rgb_{first}_{second}_b.png", square(colour_source(second), COLOUR_SIDE))


if __name__ == "__main__":
    main()
