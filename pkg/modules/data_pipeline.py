import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Literal, NamedTuple, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch.utils.data import DataLoader, Dataset

from .errors import ConfigError, EmptyDatasetError, InvalidInputError
from .manifest import DatasetManifest
from .settings_manager import AugmentConfig

Domain = Literal["X", "Y"]
BatchKind = Literal["paired", "unpaired"]


# stream tags for derive_seed
SCHEDULE_STREAM = 1
AUGMENT_STREAM = 2
POOL_STREAM = 3


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 32-bit seed for a (seed, key...) stream."""
    # the key count keeps (s, e) and (s, e, 0) apart
    words = [seed % 2**32, len(keys), *[k % 2**32 for k in keys]]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


# --- image I/O ---
def load_image(path: Union[str, Path]) -> torch.Tensor:
    """8-bit RGB file -> (3, H, W) float32 tensor in [-1, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    tensor = torch.from_numpy(arr.copy()).permute(2, 0, 1)
    return tensor / 127.5 - 1.0


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor in [-1, 1] -> (H, W, 3) uint8 array."""
    if image.ndim == 4:
        if image.shape[0] != 1:
            raise InvalidInputError("to_uint8 converts a single image, not a batch")
        image = image[0]
    scaled = ((image.detach().float().clamp(-1.0, 1.0) + 1.0) * 127.5).round()
    return scaled.permute(1, 2, 0).cpu().numpy().astype(np.uint8)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.asarray(arr, dtype=np.float32).copy()).permute(2, 0, 1) / 127.5 - 1.0


def save_image(image: torch.Tensor, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def resize_image(image: torch.Tensor, size_hw: Tuple[int, int], domain: Domain = "X") -> torch.Tensor:
    """Bicubic for photos, nearest for label images so label colors stay exact."""
    if tuple(image.shape[-2:]) == tuple(size_hw):
        return image
    batched = image.unsqueeze(0) if image.ndim == 3 else image
    if domain == "Y":
        out = F.interpolate(batched, size=size_hw, mode="nearest")
    else:
        out = F.interpolate(batched, size=size_hw, mode="bicubic", align_corners=False)
        out = out.clamp(-1.0, 1.0)
    return out[0] if image.ndim == 3 else out


# --- augmentation ---
class AugmentParams(NamedTuple):
    top: int
    left: int
    flip: bool


def _check_augment_config(cfg: AugmentConfig) -> None:
    if cfg.crop_size > cfg.load_size:
        raise ConfigError(f"crop_size {cfg.crop_size} exceeds load_size {cfg.load_size}")


def sample_augment_params(rng: np.random.Generator, cfg: AugmentConfig) -> AugmentParams:
    _check_augment_config(cfg)
    span = cfg.load_size - cfg.crop_size
    top = int(rng.integers(0, span + 1))
    left = int(rng.integers(0, span + 1))
    flip = bool(rng.random() < 0.5) if cfg.flip else False
    return AugmentParams(top, left, flip)


def apply_augment(
    sample: torch.Tensor, params: AugmentParams, cfg: AugmentConfig, domain: Domain
) -> torch.Tensor:
    if sample.ndim != 3 or sample.shape[0] != 3:
        raise InvalidInputError(f"Expected an RGB (3, H, W) image, got {tuple(sample.shape)}")
    resized = resize_image(sample, (cfg.load_size, cfg.load_size), domain)
    c = cfg.crop_size
    cropped = resized[:, params.top : params.top + c, params.left : params.left + c]
    if params.flip:
        cropped = torch.flip(cropped, dims=[2])
    return cropped.contiguous()


def augment(
    sample: torch.Tensor, rng: np.random.Generator, cfg: AugmentConfig, domain: Domain = "X"
) -> torch.Tensor:
    """Resize to load_size, random crop to crop_size, horizontal flip with p=0.5."""
    return apply_augment(sample, sample_augment_params(rng, cfg), cfg, domain)


def augment_pair(
    x: torch.Tensor, y: torch.Tensor, rng: np.random.Generator, cfg: AugmentConfig
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Same crop offsets and flip decision for both images of a pair."""
    params = sample_augment_params(rng, cfg)
    return apply_augment(x, params, cfg, "X"), apply_augment(y, params, cfg, "Y")


# --- epoch schedule ---
@dataclass(frozen=True)
class BatchDescriptor:
    kind: BatchKind
    x_id: str
    y_id: str

    @property
    def is_paired(self) -> bool:
        return self.kind == "paired"


@dataclass(frozen=True)
class EpochSchedule:
    entries: Tuple[BatchDescriptor, ...]
    seed: int
    balanced: bool

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[BatchDescriptor]:
        return iter(self.entries)

    def paired_counts(self) -> Counter:
        return Counter(e.x_id for e in self.entries if e.is_paired)

    def unpaired_counts(self, domain: Domain) -> Counter:
        return Counter(
            (e.x_id if domain == "X" else e.y_id) for e in self.entries if not e.is_paired
        )


def _cycled_shuffle(ids: List[str], length: int, rng: np.random.Generator) -> List[str]:
    out: List[str] = []
    while len(out) < length:
        out.extend(ids[i] for i in rng.permutation(len(ids)))
    return out[:length]


def build_epoch_schedule(
    manifest: DatasetManifest, seed: int, balanced: bool = True
) -> EpochSchedule:
    """
    Balanced: paired ids are replicated round-robin up to the unpaired count U, so the
    first (U mod P) pairs in manifest order get the extra copy. Unbalanced: each pair once.
    Paired and unpaired entries are then shuffled jointly.
    """
    paired_ids = manifest.paired_ids()
    ux = [e.id for e in manifest.unpaired_x]
    uy = [e.id for e in manifest.unpaired_y]
    if not paired_ids and not ux and not uy:
        raise EmptyDatasetError("Cannot build a schedule for an empty dataset.")
    if bool(ux) != bool(uy):
        raise EmptyDatasetError(
            f"Unpaired streams must both be present or both absent (X={len(ux)}, Y={len(uy)})."
        )

    rng = np.random.default_rng(seed % 2**32)
    n_unpaired = max(len(ux), len(uy))
    entries: List[BatchDescriptor] = []

    # X and Y streams are shuffled independently; the shorter one wraps around.
    xs = _cycled_shuffle(ux, n_unpaired, rng) if ux else []
    ys = _cycled_shuffle(uy, n_unpaired, rng) if uy else []
    entries.extend(BatchDescriptor("unpaired", x, y) for x, y in zip(xs, ys))

    p = len(paired_ids)
    if p:
        n_copies = max(n_unpaired, p) if balanced else p
        entries.extend(
            BatchDescriptor("paired", paired_ids[i % p], paired_ids[i % p]) for i in range(n_copies)
        )

    order = rng.permutation(len(entries))
    schedule = EpochSchedule(tuple(entries[i] for i in order), seed=seed, balanced=balanced)
    logging.debug(
        f"Epoch schedule built: {len(schedule)} entries (P={p}, U={n_unpaired}, balanced={balanced})"
    )
    return schedule


# --- loading ---
class ScheduleDataset(Dataset):
    """
    Serves the entries of one epoch schedule. Each item is augmented with an rng derived
    from (seed, epoch, position), so prefetch workers reproduce the single-process result.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        schedule: EpochSchedule,
        augment_cfg: AugmentConfig,
        seed: int,
        epoch: int,
        start: int = 0,
        cache_images: bool = True,
    ):
        _check_augment_config(augment_cfg)
        self.manifest = manifest
        self.entries = schedule.entries[start:]
        self.start = start
        self.augment_cfg = augment_cfg
        self.seed = seed
        self.epoch = epoch
        self._paired = {e.id: e for e in manifest.paired}
        self._ux = {e.id: e for e in manifest.unpaired_x}
        self._uy = {e.id: e for e in manifest.unpaired_y}
        self._cache: Optional[Dict[str, torch.Tensor]] = {} if cache_images else None

    def __len__(self) -> int:
        return len(self.entries)

    def _load(self, rel_path: str) -> torch.Tensor:
        if self._cache is not None and rel_path in self._cache:
            return self._cache[rel_path]
        image = load_image(self.manifest.resolve(rel_path))
        if self._cache is not None:
            self._cache[rel_path] = image
        return image

    def __getitem__(self, index: int) -> Dict[str, object]:
        position = self.start + index
        desc = self.entries[index]
        rng = np.random.default_rng(derive_seed(self.seed, AUGMENT_STREAM, self.epoch, position))
        if desc.is_paired:
            entry = self._paired[desc.x_id]
            x, y = augment_pair(self._load(entry.path_x), self._load(entry.path_y), rng, self.augment_cfg)
        else:
            x = augment(self._load(self._ux[desc.x_id].path), rng, self.augment_cfg, "X")
            y = augment(self._load(self._uy[desc.y_id].path), rng, self.augment_cfg, "Y")
        return {
            "x": x,
            "y": y,
            "paired": desc.is_paired,
            "x_id": desc.x_id,
            "y_id": desc.y_id,
            "position": position,
        }


def make_loader(dataset: ScheduleDataset, num_workers: int = 0) -> DataLoader:
    return DataLoader(
        dataset,
        batch_size=1,
        shuffle=False,
        num_workers=num_workers,
        persistent_workers=False,
    )
