"""Flat parameter vectors with a named layout.

All trainable parameters of a model live in one contiguous float64 vector so
that optimizer steps and meta-updates are plain elementwise arithmetic. A
``Layout`` maps record names to (shape, offset) slices of that vector; two
``ParamSet`` objects with the same layout can be added, scaled and compared
coordinate-wise without knowing anything about the network that owns them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class LayoutRecord:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class Layout:
    """Ordered collection of named parameter records."""

    def __init__(self, records: list[LayoutRecord]):
        self.records = tuple(records)
        self._by_name = {r.name: r for r in self.records}
        if len(self._by_name) != len(self.records):
            raise ConfigError("duplicate record names in layout")
        expected = 0
        for r in self.records:
            if r.offset != expected:
                raise ConfigError(f"record {r.name!r} offset {r.offset} != {expected}")
            expected += r.size
        self.total_size = expected

    @classmethod
    def from_shapes(cls, shapes: list[tuple[str, tuple[int, ...]]]) -> "Layout":
        records, offset = [], 0
        for name, shape in shapes:
            rec = LayoutRecord(name, tuple(int(s) for s in shape), offset)
            records.append(rec)
            offset += rec.size
        return cls(records)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> LayoutRecord:
        return self._by_name[name]

    def names(self) -> list[str]:
        return [r.name for r in self.records]

    def __eq__(self, other) -> bool:
        return isinstance(other, Layout) and self.records == other.records

    def __hash__(self):
        return hash(self.records)


class ParamSet:
    """A layout plus one flat float64 value vector.

    ``get`` returns a reshaped view, so in-place writes through it update the
    flat vector; use ``set`` for whole-record assignment with a shape check.
    """

    def __init__(self, layout: Layout, values: np.ndarray | None = None):
        self.layout = layout
        if values is None:
            values = np.zeros(layout.total_size, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != layout.total_size:
            raise ConfigError(
                f"value vector has length {values.shape}, layout wants {layout.total_size}"
            )
        self.values = values

    def get(self, name: str) -> np.ndarray:
        rec = self.layout[name]
        return self.values[rec.offset : rec.offset + rec.size].reshape(rec.shape)

    def set(self, name: str, arr: np.ndarray) -> None:
        rec = self.layout[name]
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != rec.shape:
            raise ConfigError(f"record {name!r} expects shape {rec.shape}, got {arr.shape}")
        self.values[rec.offset : rec.offset + rec.size] = arr.ravel()

    def copy(self) -> "ParamSet":
        return ParamSet(self.layout, self.values.copy())

    def zeros_like(self) -> "ParamSet":
        return ParamSet(self.layout)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {r.name: self.get(r.name).copy() for r in self.layout.records}

    @classmethod
    def from_arrays(cls, layout: Layout, arrays: dict[str, np.ndarray]) -> "ParamSet":
        missing = [n for n in layout.names() if n not in arrays]
        if missing:
            raise ConfigError(f"missing records: {missing}")
        ps = cls(layout)
        for name, arr in arrays.items():
            ps.set(name, arr)
        return ps

    # Elementwise arithmetic used by the optimizer and the meta-update. The
    # layouts must match exactly; silent broadcasting across different models
    # would be a bug factory.
    def _check_mate(self, other: "ParamSet") -> None:
        if self.layout != other.layout:
            raise ConfigError("ParamSet layouts differ")

    def add(self, other: "ParamSet") -> "ParamSet":
        self._check_mate(other)
        return ParamSet(self.layout, self.values + other.values)

    def sub(self, other: "ParamSet") -> "ParamSet":
        self._check_mate(other)
        return ParamSet(self.layout, self.values - other.values)

    def scale(self, a: float) -> "ParamSet":
        return ParamSet(self.layout, self.values * float(a))
