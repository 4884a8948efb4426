"""Regenerates data/natural/*.pgm from the scikit-image sample images.

Only public-domain / CC0 sources are used. Each output is a 128x128 8-bit
grayscale crop. Sources for the test split are disjoint from the training
split.
"""
import os

import numpy as np
from skimage import color, data, transform

SIZE = 128
OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "natural")

TRAIN = [
    ("astronaut", 6, 1),
    ("chelsea", 4, 1),
    ("moon", 4, 1),
    ("brick", 3, 1),
    ("grass", 3, 1),
    ("gravel", 3, 1),
    ("cell", 4, 1),
    ("immunohistochemistry", 4, 1),
    ("retina", 4, 4),
    ("hubble_deep_field", 5, 2),
]
TEST = [
    ("camera", 2, 1),
    ("coffee", 2, 1),
    ("coins", 2, 1),
    ("clock", 2, 1),
    ("rocket", 2, 1),
]


def load_gray(name, shrink):
    img = getattr(data, name)()
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3]) * 255.0
    img = img.astype(np.float64)
    if shrink > 1:
        img = transform.rescale(img, 1.0 / shrink, anti_aliasing=True, preserve_range=True)
    return img


def write_pgm(path, img):
    img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def crops(name, count, shrink, rng):
    img = load_gray(name, shrink)
    h, w = img.shape
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        y = rng.integers(0, h - SIZE + 1)
        x = rng.integers(0, w - SIZE + 1)
        tile = img[y : y + SIZE, x : x + SIZE]
        if tile.std() < 15 and tries < 500:
            continue
        if any(abs(y - oy) < SIZE // 2 and abs(x - ox) < SIZE // 2 for oy, ox, _ in out) and tries < 500:
            continue
        out.append((y, x, tile))
    return out


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(20170424)
    for split, sources in (("train", TRAIN), ("test", TEST)):
        for name, count, shrink in sources:
            for i, (_, _, tile) in enumerate(crops(name, count, shrink, rng)):
                write_pgm(os.path.join(OUT, "%s_%s_%d.pgm" % (split, name, i)), tile)


if __name__ == "__main__":
    main()
