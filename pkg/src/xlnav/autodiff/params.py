"""Named parameter storage with gradient accumulators."""

import numpy as np


class ParamStore:
    """name -> (value, gradient) pairs; iteration order is lexicographic."""

    def __init__(self):
        self._values = {}
        self._grads = {}

    def add(self, name, value):
        if name in self._values:
            raise KeyError(f"parameter already registered: {name}")
        arr = np.array(value, dtype=np.float64)
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def value(self, name):
        return self._values[name]

    def grad(self, name):
        return self._grads[name]

    def set_value(self, name, value):
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._values[name].shape:
            raise ValueError(f"shape mismatch for {name}: "
                             f"{arr.shape} vs {self._values[name].shape}")
        self._values[name][...] = arr

    def names(self):
        return sorted(self._values)

    def __contains__(self, name):
        return name in self._values

    def __len__(self):
        return len(self._values)

    def zero_grads(self):
        for g in self._grads.values():
            g[...] = 0.0

    def n_coords(self):
        return sum(v.size for v in self._values.values())

    def copy(self):
        out = ParamStore()
        for name in self.names():
            out.add(name, self._values[name].copy())
        return out

    def state_dict(self):
        return {name: self._values[name].copy() for name in self.names()}

    def load_state_dict(self, state):
        for name, arr in state.items():
            if name not in self._values:
                self.add(name, arr)
            else:
                self.set_value(name, arr)
