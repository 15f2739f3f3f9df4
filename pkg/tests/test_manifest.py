import json

import numpy as np
import pytest
from pydantic import ValidationError

from modules.colormap import ColorEntry, ColorMap, cityscapes_colormap, encode_labels, load_colormap, parse_colormap
from modules.errors import ConfigError, InvalidInputError, MissingFileError
from modules.manifest import DatasetManifest, PairedEntry, UnpairedEntry, load_manifest, save_manifest


def _manifest(n_paired=3, n_ux=2, n_uy=2):
    return DatasetManifest(
        name="m",
        paired=[PairedEntry(id=f"p{i}", path_x=f"x/p{i}.png", path_y=f"y/p{i}.png") for i in range(n_paired)],
        unpaired_x=[UnpairedEntry(id=f"ux{i}", path=f"x/ux{i}.png") for i in range(n_ux)],
        unpaired_y=[UnpairedEntry(id=f"uy{i}", path=f"y/uy{i}.png") for i in range(n_uy)],
    )


# --- colormap ---
def test_cityscapes_colormap_has_19_distinct_classes():
    cmap = cityscapes_colormap()
    assert cmap.n_classes == 19
    assert cmap.names()[0] == "road"
    assert tuple(cmap.colors()[0]) == (128, 64, 128)
    assert len({tuple(c) for c in cmap.colors()}) == 19


def test_parse_colormap_skips_comments_and_sorts():
    cmap = parse_colormap("# id r g b\n1 255 255 255 white\n\n0 0 0 0 black\n")
    assert cmap.names() == ["black", "white"]
    assert cmap.colors().tolist() == [[0, 0, 0], [255, 255, 255]]


@pytest.mark.parametrize(
    "text",
    [
        "",
        "0 1 2\n",
        "0 a b c name\n",
        "0 0 0 0 a\n2 1 1 1 b\n",
        "0 0 0 0 a\n1 0 0 0 b\n",
        "0 0 0 300 a\n",
    ],
)
def test_parse_colormap_rejects_bad_rows(text):
    with pytest.raises((ConfigError, ValidationError)):
        parse_colormap(text)


def test_load_colormap_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_colormap(tmp_path / "none.txt")


def test_encode_labels_uses_colormap_colors():
    cmap = ColorMap(entries=[ColorEntry(class_id=0, rgb=(1, 2, 3)), ColorEntry(class_id=1, rgb=(4, 5, 6))])
    image = encode_labels(np.array([[0, 1], [1, 1]]), cmap)
    assert image.dtype == np.uint8
    assert image[0, 0].tolist() == [1, 2, 3]
    assert image[1, 1].tolist() == [4, 5, 6]
    with pytest.raises(ConfigError):
        encode_labels(np.array([[2]]), cmap)


# --- manifest ---
def test_duplicate_and_clashing_ids_rejected():
    with pytest.raises(ValidationError):
        DatasetManifest(paired=[PairedEntry(id="a", path_x="x", path_y="y")] * 2)
    with pytest.raises(ValidationError):
        DatasetManifest(
            paired=[PairedEntry(id="a", path_x="x", path_y="y")],
            unpaired_x=[UnpairedEntry(id="a", path="x2")],
        )


def test_with_selection_demotes_other_pairs():
    manifest = _manifest()
    selected = manifest.with_selection(["p1"])
    assert selected.paired_ids() == ["p1"]
    assert [e.id for e in selected.unpaired_x] == ["ux0", "ux1", "p0", "p2"]
    assert [e.path for e in selected.unpaired_y][-2:] == ["y/p0.png", "y/p2.png"]
    assert selected.n_unpaired == 4
    # the original manifest is untouched
    assert manifest.n_paired == 3


def test_with_selection_rejects_unknown_ids():
    with pytest.raises(InvalidInputError):
        _manifest().with_selection(["p9"])


def test_unpaired_only_demotes_everything():
    manifest = _manifest().unpaired_only()
    assert manifest.n_paired == 0
    assert manifest.n_unpaired == 5


def test_restrict_unpaired_x_keeps_listed_images():
    manifest = _manifest(n_ux=4)
    restricted = manifest.restrict_unpaired_x(["ux3", "ux1"])
    assert restricted.unpaired_x_ids() == ["ux1", "ux3"]
    assert restricted.paired_ids() == manifest.paired_ids()
    assert restricted.unpaired_y == manifest.unpaired_y
    assert restricted.root == manifest.root
    assert len(manifest.unpaired_x) == 4
    with pytest.raises(InvalidInputError):
        manifest.restrict_unpaired_x(["p0"])


def test_save_and_load_resolve_paths_against_manifest_dir(tmp_path):
    path = tmp_path / "data" / "manifest.json"
    save_manifest(_manifest(), path)
    first = path.read_bytes()
    loaded = load_manifest(path)
    assert loaded.root == path.parent
    assert loaded.resolve("x/p0.png") == path.parent / "x" / "p0.png"
    save_manifest(loaded, path)
    assert path.read_bytes() == first


def test_load_manifest_errors(tmp_path):
    with pytest.raises(MissingFileError):
        load_manifest(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"paired": [{"id": "a"}]}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_manifest(bad)


def test_validate_files_lists_every_missing_path(tmp_path):
    manifest = _manifest(n_paired=1, n_ux=1, n_uy=1).with_root(tmp_path)
    with pytest.raises(MissingFileError) as info:
        manifest.validate_files()
    assert len(info.value.missing) == 4
