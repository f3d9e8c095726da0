"""Electrode layout: grid positions, directional scan orders, brain regions."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

DEFAULT_MONTAGE = "montage_seed62.txt"
N_ELECTRODES = 62
N_REGIONS = 16


class MontageError(ValueError):
    pass


@dataclass(frozen=True)
class Montage:
    names: tuple[str, ...]
    rows: tuple[int, ...]
    cols: tuple[int, ...]
    region_names: tuple[str, ...]
    # member electrode indices per region, in file order
    regions: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def region_sizes(self) -> list[int]:
        return [len(r) for r in self.regions]

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class ScanOrders:
    """Serpentine scan orders; the predecessor of an electrode along a scan
    is the element visited just before it (``-1`` for the first)."""
    horizontal: np.ndarray
    vertical: np.ndarray
    pred_horizontal: np.ndarray = field(repr=False)
    pred_vertical: np.ndarray = field(repr=False)

    def predecessors(self, direction: str) -> list[set[int]]:
        pred = self.pred_horizontal if direction == "h" else self.pred_vertical
        return [set() if p < 0 else {int(p)} for p in pred]


def parse_montage(text: str, *, expected_n: int | None = N_ELECTRODES,
                  expected_regions: int | None = N_REGIONS, source: str = "<string>") -> Montage:
    names: list[str] = []
    rows: list[int] = []
    cols: list[int] = []
    region_of: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 3)
        if len(parts) != 4:
            raise MontageError(f"{source}:{lineno}: expected 'NAME ROW COL REGION_NAME', got {raw!r}")
        name, r, c, region = parts
        try:
            r_i, c_i = int(r), int(c)
        except ValueError:
            raise MontageError(f"{source}:{lineno}: non-integer grid position for {name}") from None
        if name in names:
            raise MontageError(f"{source}:{lineno}: duplicate electrode {name}")
        names.append(name)
        rows.append(r_i)
        cols.append(c_i)
        region_of.append(region.strip())

    if expected_n is not None and len(names) != expected_n:
        raise MontageError(f"{source}: expected {expected_n} electrodes, found {len(names)}")
    seen: dict[tuple[int, int], str] = {}
    for name, r, c in zip(names, rows, cols):
        if (r, c) in seen:
            raise MontageError(f"{source}: electrodes {seen[(r, c)]} and {name} share grid cell ({r}, {c})")
        seen[(r, c)] = name

    region_names: list[str] = []
    members: dict[str, list[int]] = {}
    for i, reg in enumerate(region_of):
        if reg not in members:
            region_names.append(reg)
            members[reg] = []
        members[reg].append(i)
    if expected_regions is not None and len(region_names) != expected_regions:
        raise MontageError(f"{source}: expected {expected_regions} regions, found {len(region_names)}")
    return Montage(tuple(names), tuple(rows), tuple(cols), tuple(region_names),
                   tuple(tuple(members[r]) for r in region_names))


def montage_from_regions(names, rows, cols, regions: dict[str, list[str]]) -> Montage:
    """Build a montage from explicit region membership lists.

    Unlike the file format, this can express an electrode listed in two
    regions, which is rejected here.
    """
    names = list(names)
    owner: dict[str, str] = {}
    for reg, els in regions.items():
        for e in els:
            if e not in names:
                raise MontageError(f"region {reg!r} references unknown electrode {e}")
            if e in owner:
                raise MontageError(f"electrode {e} listed in regions {owner[e]!r} and {reg!r}")
            owner[e] = reg
    missing = [e for e in names if e not in owner]
    if missing:
        raise MontageError(f"electrodes without a region: {missing}")
    lines = [f"{e} {r} {c} {owner[e]}" for e, r, c in zip(names, rows, cols)]
    m = parse_montage("\n".join(lines), expected_n=None, expected_regions=None)
    order = list(regions)
    idx = {r: m.region_names.index(r) for r in order}
    return Montage(m.names, m.rows, m.cols, tuple(order), tuple(m.regions[idx[r]] for r in order))


def load_montage(path: str | Path | None = None, **kwargs) -> Montage:
    if path is None:
        text = resources.files("tann.resources").joinpath(DEFAULT_MONTAGE).read_text(encoding="utf-8")
        return parse_montage(text, source=DEFAULT_MONTAGE, **kwargs)
    path = Path(path)
    return parse_montage(path.read_text(encoding="utf-8"), source=str(path), **kwargs)


def region_permutation(m: Montage) -> np.ndarray:
    """Column permutation taking electrode order to region-grouped order."""
    return np.array([i for reg in m.regions for i in reg], dtype=np.intp)


def region_slices(m: Montage) -> list[tuple[int, slice]]:
    out = []
    start = 0
    for rid, reg in enumerate(m.regions):
        out.append((rid, slice(start, start + len(reg))))
        start += len(reg)
    return out


def _serpentine(keys_major, keys_minor) -> np.ndarray:
    major = np.asarray(keys_major)
    minor = np.asarray(keys_minor)
    order = []
    for k, level in enumerate(sorted(set(major.tolist()))):
        members = np.flatnonzero(major == level)
        members = members[np.argsort(minor[members], kind="stable")]
        if k % 2 == 1:
            members = members[::-1]
        order.extend(members.tolist())
    return np.array(order, dtype=np.intp)


def _pred_from_order(order: np.ndarray) -> np.ndarray:
    pred = np.full(len(order), -1, dtype=np.intp)
    pred[order[1:]] = order[:-1]
    return pred


def traversal_orders(m: Montage) -> ScanOrders:
    """Horizontal scan: row by row, alternating column direction.
    Vertical scan: column by column, alternating row direction."""
    if len(set(zip(m.rows, m.cols))) != m.n:
        raise MontageError("two electrodes occupy the same grid cell")
    h = _serpentine(m.rows, m.cols)
    v = _serpentine(m.cols, m.rows)
    return ScanOrders(h, v, _pred_from_order(h), _pred_from_order(v))


def toy_montage(kind: str = "grid3x3") -> Montage:
    """Small layouts used by gradient checks and tests."""
    if kind == "grid3x3":
        # 8 electrodes on a 3x3 grid (centre empty), 3 regions
        cells = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)]
        names = [f"E{i}" for i in range(8)]
        regions = {"top": ["E0", "E1", "E2"], "middle": ["E3", "E4"], "bottom": ["E5", "E6", "E7"]}
    elif kind == "line3":
        cells = [(0, 0), (0, 1), (0, 2)]
        names = ["A", "B", "C"]
        regions = {"a": ["A"], "b": ["B"], "c": ["C"]}
    elif kind == "single":
        cells = [(0, 0)]
        names = ["A"]
        regions = {"a": ["A"]}
    else:
        raise ValueError(f"unknown toy montage {kind!r}")
    rows, cols = zip(*cells)
    return montage_from_regions(names, rows, cols, regions)
