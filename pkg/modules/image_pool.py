"""
History buffer of generated images shown to the discriminators.
"""

import logging
from typing import Any, Dict, List

import numpy as np
import torch


class ImagePool:
    """Bounded pool of previously generated fakes (capacity 0 disables pooling)."""

    def __init__(self, capacity: int = 50, seed: int = 0):
        self.capacity = capacity
        self.stored: List[torch.Tensor] = []
        self._rng = np.random.default_rng(seed % 2**32)

    def __len__(self) -> int:
        return len(self.stored)

    def query_one(self, fresh_fake: torch.Tensor) -> torch.Tensor:
        """
        Pool not full: store the fake and return it. Full: with probability 0.5 return the
        fake unchanged, otherwise return a random stored image and store the fake in its slot.
        """
        fresh_fake = fresh_fake.detach()
        if self.capacity == 0:
            return fresh_fake
        if len(self.stored) < self.capacity:
            self.stored.append(fresh_fake.clone())
            return fresh_fake
        if self._rng.random() < 0.5:
            return fresh_fake
        idx = int(self._rng.integers(0, self.capacity))
        previous = self.stored[idx]
        self.stored[idx] = fresh_fake.clone()
        return previous.clone()

    def query(self, fakes: torch.Tensor) -> torch.Tensor:
        """Batch version: each image of an (N, C, H, W) batch goes through query_one."""
        if fakes.ndim == 3:
            return self.query_one(fakes)
        return torch.stack([self.query_one(img) for img in fakes], dim=0)

    def state_dict(self) -> Dict[str, Any]:
        return {
            "capacity": self.capacity,
            "stored": [t.cpu() for t in self.stored],
            "rng_state": self._rng.bit_generator.state,
        }

    def load_state_dict(self, state: Dict[str, Any], device: str = "cpu") -> None:
        self.capacity = int(state["capacity"])
        self.stored = [t.to(device) for t in state["stored"]]
        self._rng.bit_generator.state = state["rng_state"]
        logging.debug(f"Image pool restored with {len(self.stored)}/{self.capacity} images.")
