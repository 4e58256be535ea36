"""Frozen patch featurizer standing in for a pretrained visual encoder, and the trainable projector."""

from __future__ import annotations

import hashlib

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


class FrozenVisual:
    """Seeded affine map + tanh applied per patch. Never trained."""

    def __init__(self, raw_dim, clip_dim=48, seed=0, gain=2.0):
        rng = np.random.default_rng([seed, 0x5EED])
        self.raw_dim, self.clip_dim, self.seed = raw_dim, clip_dim, seed
        self.weight = Tensor(gain * rng.standard_normal((raw_dim, clip_dim)) / np.sqrt(raw_dim),
                             name="frozen.weight")
        self.bias = Tensor(0.1 * rng.standard_normal(clip_dim), name="frozen.bias")
        self.weight.data.flags.writeable = False
        self.bias.data.flags.writeable = False

    def digest(self):
        h = hashlib.sha256()
        h.update(self.weight.data.tobytes())
        h.update(self.bias.data.tobytes())
        return h.hexdigest()


def featurize(patches, frozen):
    """(..., l_i, raw_dim) raw patch grid -> (..., l_i, clip_dim) bounded features."""
    arr = patches.data if isinstance(patches, Tensor) else np.asarray(patches, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-1] != frozen.raw_dim:
        raise ContractError(f"patch dimension {arr.shape[-1:]} does not match the frozen "
                            f"featurizer's raw_dim={frozen.raw_dim}")
    return Tensor(np.tanh(arr @ frozen.weight.data + frozen.bias.data))


class Projector:
    def __init__(self, clip_dim, dim, rng, scale=1.0):
        self.weight = Tensor(scale * rng.standard_normal((clip_dim, dim)) / np.sqrt(clip_dim),
                             requires_grad=True, name="proj.weight")
        self.bias = Tensor(np.zeros(dim), requires_grad=True, name="proj.bias")

    def named(self):
        return {"proj.weight": self.weight, "proj.bias": self.bias}


def project(feats, proj):
    if feats.shape[-1] != proj.weight.shape[0]:
        raise DimensionError(f"features of width {feats.shape[-1]} cannot enter a projector "
                             f"expecting {proj.weight.shape[0]}")
    return T.matmul(feats, proj.weight) + proj.bias
