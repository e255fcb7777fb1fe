"""Named block layout over a flat NLP variable vector.

The estimator and controller lay out decision variables followed by
fixed data slots in one shared variable space; this helper allocates the
blocks, hands out the autodiff variables, and maps (block, index) pairs
to flat positions for bounds, warm starts and solution unpacking.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import UsageError


class BlockSpace:
    def __init__(self):
        self._blocks = {}       # name -> (offset, shape, is_data)
        self._n_dec = 0
        self._n_data = 0
        self._sealed = False
        self._vars = None

    def add(self, name: str, *shape: int, data: bool = False):
        if self._sealed and not data:
            raise UsageError("decision blocks must precede data blocks")
        size = int(np.prod(shape)) if shape else 1
        if data:
            self._sealed = True
            off = self._n_data
            self._n_data += size
        else:
            off = self._n_dec
            self._n_dec += size
        self._blocks[name] = (off, shape, data)

    @property
    def n_dec(self) -> int:
        return self._n_dec

    @property
    def n_data(self) -> int:
        return self._n_data

    @property
    def n_all(self) -> int:
        return self._n_dec + self._n_data

    def finalize(self):
        self._vars = ad.variables(self.n_all)

    def offset(self, name: str, *idx) -> int:
        off, shape, data = self._blocks[name]
        base = self._n_dec + off if data else off
        if idx:
            base += int(np.ravel_multi_index(idx, shape))
        return base

    def sym(self, name: str, *idx):
        """Autodiff variable for one entry."""
        return self._vars[self.offset(name, *idx)]

    def sym_block(self, name: str):
        """All variables of a block, shaped as an object array."""
        off, shape, data = self._blocks[name]
        base = self._n_dec + off if data else off
        size = int(np.prod(shape)) if shape else 1
        flat = np.array(self._vars[base:base + size], dtype=object)
        return flat.reshape(shape) if shape else flat[0]

    def slice(self, name: str) -> slice:
        off, shape, data = self._blocks[name]
        base = self._n_dec + off if data else off
        size = int(np.prod(shape)) if shape else 1
        return slice(base, base + size)

    def data_slice(self, name: str) -> slice:
        """Slice into the data vector (offset relative to data start)."""
        off, shape, data = self._blocks[name]
        if not data:
            raise UsageError(f"{name} is a decision block")
        size = int(np.prod(shape)) if shape else 1
        return slice(off, off + size)

    def manifest(self) -> dict:
        return {name: {"offset": off, "shape": list(shape), "data": data}
                for name, (off, shape, data) in self._blocks.items()}
