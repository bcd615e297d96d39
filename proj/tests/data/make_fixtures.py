"""Regenerates the image fixtures used by the C++ tests (needs Pillow)."""
from pathlib import Path

import numpy as np
from PIL import Image

HERE = Path(__file__).resolve().parent


def pattern_index(h, w):
    y, x = np.mgrid[0:h, 0:w].astype(np.uint64)
    return (((x * 2654435761) ^ (y * 40503) ^ (x * y * 97)) >> 3) % 256


def palette():
    i = np.arange(256)
    return np.stack([i, 255 - i, (i * 37) % 256], axis=1).astype(np.uint8)


def save_indexed(path, idx, pal, interlace):
    im = Image.fromarray(idx.astype(np.uint8), mode="P")
    im.putpalette(pal.flatten().tolist())
    im.save(path, interlace=interlace, optimize=False)
    back = np.array(Image.open(path).convert("RGB"))
    assert (back == pal[idx.astype(np.uint8)]).all(), path


def disc(h, w, r):
    y, x = np.mgrid[0:h, 0:w]
    return ((y - h / 2 + 0.5) ** 2 + (x - w / 2 + 0.5) ** 2) <= r * r


def drive_tree():
    rng = np.random.default_rng(3)
    for split, stem, num in [("training", "21_training", "21"), ("test", "01_test", "01")]:
        root = HERE / "drive_mini" / split
        for d in ("images", "1st_manual", "mask"):
            (root / d).mkdir(parents=True, exist_ok=True)
        img = rng.integers(0, 256, size=(100, 112, 3), dtype=np.uint8)
        Image.fromarray(img).save(root / "images" / f"{stem}.tif")
        (HERE / "raw").mkdir(exist_ok=True)
        (HERE / "raw" / f"{stem}.rgb").write_bytes(img.tobytes())
        vessel = np.zeros((100, 112), np.uint8)
        vessel[40:44, :] = 255
        vessel[:, 60:63] = 255
        Image.fromarray(vessel).convert("1").save(root / "1st_manual" / f"{num}_manual1.gif")
        fov = (disc(100, 112, 46) * 255).astype(np.uint8)
        Image.fromarray(fov).convert("L").save(root / "mask" / f"{stem}_mask.gif")


if __name__ == "__main__":
    gif = HERE / "gif"
    gif.mkdir(exist_ok=True)
    save_indexed(gif / "pattern_80x60.gif", pattern_index(60, 80), palette(), False)
    save_indexed(gif / "pattern_80x60_interlaced.gif", pattern_index(60, 80), palette(), True)
    small = (pattern_index(7, 5) % 4)
    save_indexed(gif / "pattern_5x7_4color.gif", small, palette()[:4], False)
    drive_tree()
