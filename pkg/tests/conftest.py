from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from dermseg.manifest import ATTRIBUTE_KINDS
from dermseg.pngio import write_image, write_mask
from dermseg.rasters import BinaryMask, Image


def make_image(h: int = 8, w: int = 8, value=None, seed: int = 0) -> Image:
    if value is not None:
        return Image(np.full((h, w, 3), value, dtype=np.uint8))
    rng = np.random.default_rng(seed)
    return Image(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def disk_mask(h: int, w: int, cy: float, cx: float, r: float) -> BinaryMask:
    ys, xs = np.mgrid[0:h, 0:w]
    return BinaryMask((np.hypot(ys - cy, xs - cx) <= r).astype(np.uint8))


def disk_image(h: int, w: int, cy: float, cx: float, r: float,
               fg=(60, 40, 35), bg=(200, 170, 160)) -> Image:
    ys, xs = np.mgrid[0:h, 0:w]
    inside = np.hypot(ys - cy, xs - cx) <= r
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[...] = np.array(bg, dtype=np.uint8)
    img[inside] = np.array(fg, dtype=np.uint8)
    return Image(img)


def write_manifest_fixture(
    root: Path,
    n_cases: int = 3,
    with_lesion: bool = True,
    attr_positive: dict | None = None,
    h: int = 24,
    w: int = 32,
) -> Path:
    """A small on-disk dataset: images, lesion gts, all five attribute gts."""
    attr_positive = attr_positive or {}
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(exist_ok=True)
    lines = [json.dumps({"seed": 7})]
    for i in range(n_cases):
        case = f"case{i:03d}"
        img = disk_image(h, w, h / 2, w / 2, min(h, w) / 3)
        write_image(img, root / "images" / f"{case}.png")
        entry = {"case_id": case, "image": f"images/{case}.png", "fold": i % 5}
        if with_lesion:
            gt = disk_mask(h, w, h / 2, w / 2, min(h, w) / 3)
            write_mask(gt, root / "gt" / f"{case}.png")
            entry["lesion_gt"] = f"gt/{case}.png"
        gts, present = {}, {}
        for kind in ATTRIBUTE_KINDS:
            positive = case in attr_positive.get(kind.value, ())
            mask = (
                disk_mask(h, w, h / 2, w / 2, 2.0)
                if positive
                else BinaryMask(np.zeros((h, w), dtype=np.uint8))
            )
            name = f"{case}_{kind.value}.png"
            write_mask(mask, root / "gt" / name)
            gts[kind.value] = f"gt/{name}"
            present[kind.value] = positive
        entry["attribute_gts"] = gts
        entry["attribute_present"] = present
        lines.append(json.dumps(entry))
    path = root / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def manifest_dir(tmp_path: Path) -> Path:
    write_manifest_fixture(tmp_path)
    return tmp_path
