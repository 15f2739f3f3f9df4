import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from .colormap import ColorEntry, ColorMap
from .data_pipeline import derive_seed
from .errors import ConfigError
from .manifest import DatasetManifest, PairedEntry, UnpairedEntry, save_manifest

MIN_IMAGE_SIZE: int = 16

# label colors (domain Y) and the colors the shaded render uses (domain X)
TOY_CLASSES: List[Tuple[str, Tuple[int, int, int], Tuple[int, int, int]]] = [
    ("sky", (70, 130, 180), (150, 195, 235)),
    ("road", (128, 64, 128), (95, 95, 100)),
    ("building", (70, 70, 70), (165, 120, 95)),
    ("vegetation", (107, 142, 35), (55, 115, 45)),
    ("car", (0, 0, 142), (185, 40, 40)),
    ("traffic_sign", (220, 220, 0), (235, 205, 70)),
    ("person", (220, 20, 60), (205, 165, 135)),
]
SKY, ROAD, BUILDING, VEGETATION, CAR, SIGN, PERSON = range(len(TOY_CLASSES))


def toy_colormap() -> ColorMap:
    return ColorMap(
        entries=[ColorEntry(class_id=i, rgb=label, name=name) for i, (name, label, _) in enumerate(TOY_CLASSES)]
    )


def _draw_scene(size: int, rng: np.random.Generator) -> np.ndarray:
    """Random street-like layout as an (H, W) class map."""
    canvas = Image.new("L", (size, size), SKY)
    draw = ImageDraw.Draw(canvas)
    horizon = int(size * rng.uniform(0.4, 0.6))
    draw.rectangle([0, horizon, size - 1, size - 1], fill=ROAD)

    for _ in range(int(rng.integers(1, 4))):
        w = int(size * rng.uniform(0.15, 0.35))
        h = int(size * rng.uniform(0.15, 0.4))
        x0 = int(rng.integers(0, max(1, size - w)))
        draw.rectangle([x0, max(0, horizon - h), x0 + w, horizon], fill=BUILDING)

    for _ in range(int(rng.integers(0, 3))):
        r = int(size * rng.uniform(0.06, 0.14))
        cx = int(rng.integers(0, size))
        cy = horizon - int(r * rng.uniform(0.2, 1.0))
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=VEGETATION)

    for _ in range(int(rng.integers(0, 3))):
        w = int(size * rng.uniform(0.15, 0.3))
        h = max(2, int(w * rng.uniform(0.35, 0.55)))
        x0 = int(rng.integers(0, max(1, size - w)))
        y0 = int(rng.integers(horizon, max(horizon + 1, size - h)))
        draw.rounded_rectangle([x0, y0, x0 + w, y0 + h], radius=max(1, h // 4), fill=CAR)

    if rng.random() < 0.5:
        s = int(size * rng.uniform(0.06, 0.1))
        cx = int(rng.integers(s, size - s))
        top = max(0, horizon - int(size * 0.25))
        draw.polygon([(cx - s, top + 2 * s), (cx + s, top + 2 * s), (cx, top)], fill=SIGN)

    if rng.random() < 0.5:
        w = max(2, int(size * 0.04))
        h = max(4, int(size * rng.uniform(0.12, 0.2)))
        x0 = int(rng.integers(0, size - w))
        y1 = int(rng.integers(horizon, size))
        draw.rectangle([x0, max(0, y1 - h), x0 + w, y1], fill=PERSON)

    return np.asarray(canvas, dtype=np.int64)


def _render_photo(class_map: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shaded, noisy render of a class map."""
    size = class_map.shape[0]
    base = np.array([photo for _, _, photo in TOY_CLASSES], dtype=np.float64)[class_map]
    shade = np.linspace(1.1, 0.8, size)[:, None, None]
    light = rng.uniform(0.85, 1.15)
    noise = rng.normal(0.0, 8.0, size=base.shape)
    photo = np.clip(base * shade * light + noise, 0, 255).astype(np.uint8)
    return np.asarray(Image.fromarray(photo).filter(ImageFilter.GaussianBlur(radius=0.6)))


def _render_labels(class_map: np.ndarray) -> np.ndarray:
    return toy_colormap().colors().astype(np.uint8)[class_map]


def _write(arr: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def _make_pair(size: int, seed: int, stream: int, index: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(derive_seed(seed, stream, index))
    class_map = _draw_scene(size, rng)
    return _render_photo(class_map, rng), _render_labels(class_map)


def synth_toy_dataset(
    n_paired: int,
    n_unpaired: int,
    image_size: int,
    seed: int,
    out_dir: Union[str, Path],
    n_test: int = 0,
) -> DatasetManifest:
    """
    Procedural street-like scenes: domain X is a shaded noisy render, domain Y the flat
    color-coded label image. Writes PNGs plus manifest.json (and test_manifest.json).
    """
    if image_size < MIN_IMAGE_SIZE:
        raise ConfigError(f"image_size must be >= {MIN_IMAGE_SIZE}, got {image_size}")
    if n_paired < 0 or n_unpaired < 0 or n_test < 0:
        raise ConfigError("sample counts must be non-negative")
    if n_paired + n_unpaired == 0:
        raise ConfigError("synth_toy_dataset needs at least one training sample")

    root = Path(out_dir)
    colormap = [e.model_dump() for e in toy_colormap().entries]
    counts: Dict[str, int] = {"files": 0}

    def pair_entries(prefix: str, stream: int, n: int) -> List[PairedEntry]:
        entries = []
        for i in range(n):
            sid = f"{prefix}_{i:04d}"
            photo, labels = _make_pair(image_size, seed, stream, i)
            _write(photo, root / "x" / f"{sid}.png")
            _write(labels, root / "y" / f"{sid}.png")
            counts["files"] += 2
            entries.append(PairedEntry(id=sid, path_x=f"x/{sid}.png", path_y=f"y/{sid}.png"))
        return entries

    paired = pair_entries("pair", 0, n_paired)
    unpaired_x: List[UnpairedEntry] = []
    unpaired_y: List[UnpairedEntry] = []
    for i in range(n_unpaired):
        # X and Y come from different scenes
        sid_x, sid_y = f"ux_{i:04d}", f"uy_{i:04d}"
        photo, _ = _make_pair(image_size, seed, 1, i)
        _, labels = _make_pair(image_size, seed, 2, i)
        _write(photo, root / "x" / f"{sid_x}.png")
        _write(labels, root / "y" / f"{sid_y}.png")
        counts["files"] += 2
        unpaired_x.append(UnpairedEntry(id=sid_x, path=f"x/{sid_x}.png"))
        unpaired_y.append(UnpairedEntry(id=sid_y, path=f"y/{sid_y}.png"))

    manifest = DatasetManifest(
        name=f"toy-{image_size}px-seed{seed}",
        paired=paired,
        unpaired_x=unpaired_x,
        unpaired_y=unpaired_y,
        colormap=colormap,
    ).with_root(root)
    save_manifest(manifest, root / "manifest.json")

    if n_test:
        test_manifest = DatasetManifest(
            name=f"toy-{image_size}px-seed{seed}-test",
            paired=pair_entries("test", 3, n_test),
            colormap=colormap,
        )
        save_manifest(test_manifest, root / "test_manifest.json")

    logging.info(
        f"Toy dataset written to {root}: {n_paired} paired, {n_unpaired} unpaired per domain, "
        f"{n_test} test pairs, {counts['files']} PNG files."
    )
    return manifest
