import os
import json
import logging
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Set, Union

from pydantic import BaseModel, Field, PrivateAttr, ValidationError, model_validator

from .colormap import ColorEntry, ColorMap
from .errors import ConfigError, InvalidInputError, MissingFileError

MANIFEST_VERSION: int = 1


class PairedEntry(BaseModel):
    id: str
    path_x: str
    path_y: str


class UnpairedEntry(BaseModel):
    id: str
    path: str


# --- 样本引用结构 ---
class SampleRef(NamedTuple):
    id: str
    domain: str  # "X" (photos) or "Y" (labels)
    path: Path


class DatasetManifest(BaseModel):
    """
    Declarative listing of a dataset: paired samples carry both domain images,
    unpaired samples carry one. Paths are relative to the manifest's directory.
    """

    version: int = MANIFEST_VERSION
    name: str = ""
    paired: List[PairedEntry] = Field(default_factory=list)
    unpaired_x: List[UnpairedEntry] = Field(default_factory=list)
    unpaired_y: List[UnpairedEntry] = Field(default_factory=list)
    colormap: Optional[List[ColorEntry]] = None

    _root: Path = PrivateAttr(default_factory=Path.cwd)

    @model_validator(mode="after")
    def ids_unique(self) -> "DatasetManifest":
        for label, ids in (
            ("paired", [e.id for e in self.paired]),
            ("unpaired_x", [e.id for e in self.unpaired_x]),
            ("unpaired_y", [e.id for e in self.unpaired_y]),
        ):
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate ids in '{label}'")
        paired_ids = {e.id for e in self.paired}
        clash = paired_ids & ({e.id for e in self.unpaired_x} | {e.id for e in self.unpaired_y})
        if clash:
            raise ValueError(f"ids used both paired and unpaired: {sorted(clash)[:5]}")
        return self

    @property
    def root(self) -> Path:
        return self._root

    def with_root(self, root: Union[str, Path]) -> "DatasetManifest":
        self._root = Path(root)
        return self

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self._root / p

    @property
    def n_paired(self) -> int:
        return len(self.paired)

    @property
    def n_unpaired(self) -> int:
        return max(len(self.unpaired_x), len(self.unpaired_y))

    def is_empty(self) -> bool:
        return not (self.paired or self.unpaired_x or self.unpaired_y)

    def paired_ids(self) -> List[str]:
        return [e.id for e in self.paired]

    def get_colormap(self) -> Optional[ColorMap]:
        return ColorMap(entries=self.colormap) if self.colormap else None

    def iter_files(self) -> Iterable[SampleRef]:
        for e in self.paired:
            yield SampleRef(e.id, "X", self.resolve(e.path_x))
            yield SampleRef(e.id, "Y", self.resolve(e.path_y))
        for e in self.unpaired_x:
            yield SampleRef(e.id, "X", self.resolve(e.path))
        for e in self.unpaired_y:
            yield SampleRef(e.id, "Y", self.resolve(e.path))

    def validate_files(self) -> None:
        """Fails fast with every missing path listed."""
        missing = [str(ref.path) for ref in self.iter_files() if not ref.path.is_file()]
        if missing:
            logging.error(f"Manifest '{self.name}' references {len(missing)} missing files.")
            raise MissingFileError(missing, context=f"manifest '{self.name}'")

    def with_selection(self, selected_ids: Iterable[str]) -> "DatasetManifest":
        """
        Keeps the selected pairs paired; every other pair is demoted into the
        unpaired streams (its X image to unpaired_x, its Y image to unpaired_y).
        """
        selected: Set[str] = set(selected_ids)
        known = set(self.paired_ids())
        unknown = selected - known
        if unknown:
            raise InvalidInputError(
                f"selection ids not among the manifest's paired samples: {sorted(unknown)[:5]}"
            )
        keep = [e for e in self.paired if e.id in selected]
        demoted = [e for e in self.paired if e.id not in selected]
        result = DatasetManifest(
            version=self.version,
            name=self.name,
            paired=keep,
            unpaired_x=list(self.unpaired_x) + [UnpairedEntry(id=e.id, path=e.path_x) for e in demoted],
            unpaired_y=list(self.unpaired_y) + [UnpairedEntry(id=e.id, path=e.path_y) for e in demoted],
            colormap=self.colormap,
        )
        logging.info(
            f"Selection applied: {len(keep)} paired kept, {len(demoted)} pairs demoted to unpaired."
        )
        return result.with_root(self._root)

    def unpaired_only(self) -> "DatasetManifest":
        return self.with_selection([])

    def unpaired_x_ids(self) -> List[str]:
        return [e.id for e in self.unpaired_x]

    def restrict_unpaired_x(self, kept_ids: Iterable[str]) -> "DatasetManifest":
        """Keeps only the listed unpaired X images; pairs and unpaired_y are untouched."""
        kept: Set[str] = set(kept_ids)
        unknown = kept - set(self.unpaired_x_ids())
        if unknown:
            raise InvalidInputError(
                f"selection ids not among the manifest's unpaired X images: {sorted(unknown)[:5]}"
            )
        result = self.model_copy(update={"unpaired_x": [e for e in self.unpaired_x if e.id in kept]})
        logging.info(f"Unpaired X restricted to {len(kept)} of {len(self.unpaired_x)} images.")
        return result.with_root(self._root)



def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    manifest_path = Path(path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            raw_data = json.load(f)
    except FileNotFoundError as e:
        raise MissingFileError([str(manifest_path)], context="manifest") from e
    except (json.JSONDecodeError, OSError) as e:
        logging.error(f"Error reading manifest '{manifest_path}': {e}")
        raise ConfigError(f"Cannot read manifest '{manifest_path}': {e}") from e
    try:
        manifest = DatasetManifest.model_validate(raw_data)
    except ValidationError as e:
        logging.error(f"Manifest '{manifest_path}' failed validation: {e}")
        raise ConfigError(f"Invalid manifest '{manifest_path}': {e}") from e
    logging.debug(
        f"Manifest loaded: {manifest.n_paired} paired, {len(manifest.unpaired_x)} unpaired X, "
        f"{len(manifest.unpaired_y)} unpaired Y"
    )
    return manifest.with_root(manifest_path.parent)


def save_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    manifest_path = Path(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    data = manifest.model_dump(mode="json", exclude_none=True)
    tmp_path = manifest_path.with_suffix(manifest_path.suffix + ".tmp")
    with open(tmp_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    os.replace(tmp_path, manifest_path)
    logging.debug(f"Manifest saved to {manifest_path}")
