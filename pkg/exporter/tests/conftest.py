"""Fixture: a small real-image dataset, color-separable by class."""

import numpy as np
import pytest
from PIL import Image

CLASSES = ["red", "green", "blue"]
BASE_RGB = {"red": (200, 30, 30), "green": (30, 200, 30), "blue": (30, 30, 200)}


def make_image_fixture(root, images_per_class=3, seed=0, corrupt=True):
    """Writes images_per_class noisy solid-color PNGs per class folder,
    plus (optionally) one undecodable file in the first class."""
    rng = np.random.default_rng(seed)
    for name in CLASSES:
        folder = root / name
        folder.mkdir(parents=True)
        base = np.array(BASE_RGB[name], dtype=np.float32)
        for i in range(images_per_class):
            pixels = base[None, None, :] + rng.normal(0, 25, size=(48, 48, 3))
            arr = np.clip(pixels, 0, 255).astype(np.uint8)
            Image.fromarray(arr).save(folder / f"img_{i:02d}.png")
    if corrupt:
        (root / CLASSES[0] / "broken.png").write_bytes(b"this is not a png")
    classes_file = root / "classes.txt"
    classes_file.write_text("".join(f"{c}\n" for c in CLASSES))
    return classes_file


@pytest.fixture
def image_root(tmp_path):
    root = tmp_path / "images"
    make_image_fixture(root)
    return root
