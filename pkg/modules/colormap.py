import logging
from importlib import resources
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .errors import ConfigError

RGB = Tuple[int, int, int]


class ColorEntry(BaseModel):
    class_id: int = Field(ge=0)
    rgb: RGB
    name: str = ""

    @field_validator("rgb")
    def rgb_in_byte_range(cls, v):
        if any(c < 0 or c > 255 for c in v):
            raise ValueError(f"RGB components must lie in 0..255, got {v}")
        return v


class ColorMap(BaseModel):
    entries: List[ColorEntry]

    @field_validator("entries")
    def contiguous_and_distinct(cls, v: List[ColorEntry]):
        ids = sorted(e.class_id for e in v)
        if ids != list(range(len(v))):
            raise ValueError("class ids must be contiguous 0..n-1")
        colors = [tuple(e.rgb) for e in v]
        if len(set(colors)) != len(colors):
            raise ValueError("colormap colors must be distinct")
        return sorted(v, key=lambda e: e.class_id)

    @property
    def n_classes(self) -> int:
        return len(self.entries)

    def colors(self) -> np.ndarray:
        """(n_classes, 3) array ordered by class id."""
        return np.array([e.rgb for e in self.entries], dtype=np.int64)

    def names(self) -> List[str]:
        return [e.name for e in self.entries]


def parse_colormap(text: str) -> ColorMap:
    """Parses rows of `class_id R G B name`; blank lines and '#' comments are skipped."""
    entries: List[ColorEntry] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(maxsplit=4)
        if len(parts) < 4:
            raise ConfigError(f"Colormap line {line_no} needs 'class_id R G B [name]': {line!r}")
        try:
            class_id, r, g, b = (int(p) for p in parts[:4])
        except ValueError as e:
            raise ConfigError(f"Colormap line {line_no} is not numeric: {line!r}") from e
        name = parts[4] if len(parts) > 4 else ""
        entries.append(ColorEntry(class_id=class_id, rgb=(r, g, b), name=name))
    if not entries:
        raise ConfigError("Colormap is empty")
    try:
        return ColorMap(entries=entries)
    except ValueError as e:
        raise ConfigError(f"Invalid colormap: {e}") from e


def load_colormap(path: Union[str, Path]) -> ColorMap:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        logging.error(f"Cannot read colormap '{path}': {e}")
        raise ConfigError(f"Cannot read colormap '{path}': {e}") from e
    return parse_colormap(text)


def cityscapes_colormap() -> ColorMap:
    """The 19 evaluation classes of the Cityscapes label set."""
    text = resources.files("modules").joinpath("data/cityscapes_colormap.txt").read_text(
        encoding="utf-8"
    )
    return parse_colormap(text)


def encode_labels(class_map: np.ndarray, colormap: ColorMap) -> np.ndarray:
    """Class map (H, W) -> uint8 RGB image (H, W, 3) using the colormap colors."""
    class_map = np.asarray(class_map)
    if class_map.min(initial=0) < 0 or class_map.max(initial=0) >= colormap.n_classes:
        raise ConfigError("class map holds ids outside the colormap")
    return colormap.colors().astype(np.uint8)[class_map]
