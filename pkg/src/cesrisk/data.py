"""Yield-panel ingestion, serialization and descriptive statistics.

Input files are comma-delimited UTF-8 text with a header naming the columns
``year, water, nitrogen, yield`` (remappable). Nitrogen is stored shifted by
+1 so that zero-application plots stay in the CES domain; :func:`describe`
reports the unshifted values.
"""

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "COLUMNS",
    "NITROGEN_SHIFT",
    "Dataset",
    "VariableSummary",
    "load_dataset",
    "save_dataset",
    "read_kv",
    "describe",
]

COLUMNS = ("year", "water", "nitrogen", "yield")
NITROGEN_SHIFT = 1.0
INPUT_NAMES = ("water", "nitrogen")


def _ro(a, dtype=float):
    a = np.array(a, dtype=dtype).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable observation table.

    ``nitrogen`` is the estimation value (raw + ``nitrogen_shift``).
    """

    year: np.ndarray
    water: np.ndarray
    nitrogen: np.ndarray
    yield_: np.ndarray
    site: str = ""
    crop: str = ""
    base_year: int = None
    nitrogen_shift: float = NITROGEN_SHIFT
    meta: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        year = _ro(self.year, dtype=np.int64)
        cols = {"water": _ro(self.water), "nitrogen": _ro(self.nitrogen), "yield": _ro(self.yield_)}
        n = year.size
        for name, col in cols.items():
            if col.size != n:
                raise DataError(f"column length mismatch: {name} has {col.size} rows, year has {n}")
        object.__setattr__(self, "year", year)
        object.__setattr__(self, "water", cols["water"])
        object.__setattr__(self, "nitrogen", cols["nitrogen"])
        object.__setattr__(self, "yield_", cols["yield"])
        if self.base_year is None:
            object.__setattr__(self, "base_year", int(year.min()) if n else 0)
        else:
            object.__setattr__(self, "base_year", int(self.base_year))
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))
        for i in range(n):
            if not (self.water[i] > 0):
                raise DataError(f"water must be positive, got {self.water[i]}", row=i + 2, column="water")
            if not (self.nitrogen[i] >= self.nitrogen_shift):
                raise DataError(
                    f"nitrogen must be non-negative, got {self.nitrogen[i] - self.nitrogen_shift}",
                    row=i + 2,
                    column="nitrogen",
                )
            if not (self.yield_[i] > 0):
                raise DataError(f"yield must be positive, got {self.yield_[i]}", row=i + 2, column="yield")

    def __len__(self):
        return self.year.size

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.year, other.year)
            and np.array_equal(self.water, other.water)
            and np.array_equal(self.nitrogen, other.nitrogen)
            and np.array_equal(self.yield_, other.yield_)
            and (self.site, self.crop, self.base_year, self.nitrogen_shift)
            == (other.site, other.crop, other.base_year, other.nitrogen_shift)
        )

    @property
    def n(self):
        return self.year.size

    @property
    def raw_nitrogen(self):
        return self.nitrogen - self.nitrogen_shift

    @property
    def inputs(self):
        """``(n, 2)`` matrix of estimation inputs (water, nitrogen)."""
        return np.column_stack([self.water, self.nitrogen])

    @property
    def dummy_years(self):
        return tuple(int(y) for y in np.unique(self.year) if y != self.base_year)

    @property
    def dummies(self):
        """``(n, m)`` 0/1 matrix, one column per non-base year."""
        yrs = self.dummy_years
        return np.column_stack([(self.year == y).astype(float) for y in yrs]) if yrs else np.zeros((self.n, 0))

    @classmethod
    def from_raw(cls, year, water, nitrogen, yield_, **kw):
        """Build from unshifted nitrogen values as found in data files."""
        shift = kw.get("nitrogen_shift", NITROGEN_SHIFT)
        return cls(year, water, np.asarray(nitrogen, dtype=float) + shift, yield_, **kw)


def _parse_float(text, row, column):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise DataError(f"non-numeric value {text!r}", row=row, column=column) from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {text!r}", row=row, column=column)
    return v


def read_kv(source):
    """Parse a flat ``key = value`` file (path or text stream); ``#`` starts a comment."""
    text = source.read() if hasattr(source, "read") else Path(source).read_text(encoding="utf-8")
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}", key=line)
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_dataset(source, columns=None, site="", crop="", nitrogen_shift=NITROGEN_SHIFT, base_year=None):
    """Read a delimited yield file into a :class:`Dataset`.

    ``source`` is a path or a file-like object. ``columns`` maps the canonical
    names in :data:`COLUMNS` to header names in the file. A sidecar
    ``<path>.meta`` (key = value) supplies site, crop and base year when
    present; explicit arguments win.
    """
    mapping = {c: c for c in COLUMNS}
    mapping.update(columns or {})
    meta = {}
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        side = path.with_name(path.name + ".meta")
        if side.exists():
            meta = read_kv(side)
        fh = open(path, newline="", encoding="utf-8")
    else:
        fh = source
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file") from None
        idx = {}
        for canon, name in mapping.items():
            if name not in header:
                raise DataError(f"missing column {name!r}", row=1, column=name)
            idx[canon] = header.index(name)
        rows = {c: [] for c in COLUMNS}
        for rowno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            for canon in COLUMNS:
                j = idx[canon]
                name = mapping[canon]
                if j >= len(rec):
                    raise DataError("missing value", row=rowno, column=name)
                v = _parse_float(rec[j].strip(), rowno, name)
                if canon == "year":
                    if v != int(v):
                        raise DataError(f"year must be an integer, got {rec[j]!r}", row=rowno, column=name)
                    v = int(v)
                elif canon in ("water", "yield") and v <= 0:
                    raise DataError(f"{canon} must be positive, got {v}", row=rowno, column=name)
                elif canon == "nitrogen" and v < 0:
                    raise DataError(f"nitrogen must be non-negative, got {v}", row=rowno, column=name)
                rows[canon].append(v)
    finally:
        if fh is not source:
            fh.close()
    if base_year is None and "base_year" in meta:
        base_year = int(meta["base_year"])
    return Dataset.from_raw(
        rows["year"],
        rows["water"],
        rows["nitrogen"],
        rows["yield"],
        site=site or meta.get("site", ""),
        crop=crop or meta.get("crop", ""),
        base_year=base_year,
        nitrogen_shift=nitrogen_shift,
    )


def save_dataset(d, path):
    """Write ``d`` in the input dialect plus a ``.meta`` sidecar.

    Values are written with ``repr`` so that reloading is exact.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for yr, wa, ni, yi in zip(d.year, d.water, d.raw_nitrogen, d.yield_):
            w.writerow([int(yr), repr(float(wa)), repr(float(ni)), repr(float(yi))])
    side = path.with_name(path.name + ".meta")
    side.write_text(f"site = {d.site}\ncrop = {d.crop}\nbase_year = {d.base_year}\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class VariableSummary:
    name: str
    n: int
    mean: float
    sd: float  # None when n < 2
    min: float
    max: float

    def as_dict(self):
        return {"n": self.n, "mean": self.mean, "sd": self.sd, "min": self.min, "max": self.max}


def describe(d):
    """Per-variable n, mean, sample sd (n - 1), min and max.

    Nitrogen is summarized before the +1 shift.
    """
    if d.n == 0:
        raise DataError("no observations")
    out = []
    for name, col in (("water", d.water), ("nitrogen", d.raw_nitrogen), ("yield", d.yield_)):
        sd = float(np.std(col, ddof=1)) if d.n > 1 else None
        out.append(VariableSummary(name, d.n, float(np.mean(col)), sd, float(col.min()), float(col.max())))
    return out
