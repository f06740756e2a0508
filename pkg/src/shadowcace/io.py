"""Dataset files, contingency tables and the bundled deliberation-study counts."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, MissingnessMismatch, NonBinaryField, ParseError
from .identification import JointLaw
from .model import Dataset

CSV_HEADER = ("z", "a", "r", "y")


@dataclass(frozen=True)
class ContingencyTable:
    """Unit counts keyed by ``(z, a, r, y)`` with ``y=None`` for non-respondents."""

    counts: dict

    def __post_init__(self):
        clean = {}
        for key, c in self.counts.items():
            z, a, r, y = key
            if any(v not in (0, 1) for v in (z, a, r)):
                raise NonBinaryField(f"cell {key}: z, a, r must be binary")
            if (r == 0) != (y is None):
                raise MissingnessMismatch(f"cell {key}: y must be absent exactly when r=0")
            if int(c) != c or c < 0:
                raise DataError(f"cell {key}: count {c!r} is not a non-negative integer")
            clean[(int(z), int(a), int(r), None if y is None else float(y))] = int(c)
        object.__setattr__(self, "counts", clean)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def ordered_cells(self):
        """Cells ordered by z desc, a desc, r desc, y asc."""
        def key(item):
            (z, a, r, y), _ = item
            return (-z, -a, -r, -math.inf if y is None else y)

        return sorted(self.counts.items(), key=key)


def _table4_counts():
    # (z, a) -> (respondents with y=1, respondents with y=2, non-respondents)
    cols = {(1, 1): (130, 67, 21), (1, 0): (139, 24, 72), (0, 1): (62, 12, 5), (0, 0): (82, 11, 45)}
    out = {}
    for (z, a), (y1, y2, miss) in cols.items():
        out[(z, a, 1, 1.0)] = y1
        out[(z, a, 1, 2.0)] = y2
        out[(z, a, 0, None)] = miss
    return out


#: Deliberation-study counts: Z = 1 for high political knowledge, A = 1 for
#: attending the online session, Y in {1, 2}.
TABLE4 = ContingencyTable(_table4_counts())


def expand_contingency(table: ContingencyTable) -> Dataset:
    z, a, r, y = [], [], [], []
    for (cz, ca, cr, cy), c in table.ordered_cells():
        z += [cz] * c
        a += [ca] * c
        r += [cr] * c
        y += [np.nan if cy is None else cy] * c
    return Dataset.from_arrays(z, a, r, y)


def table4_dataset() -> Dataset:
    return expand_contingency(TABLE4)


def _format_y(y: float) -> str:
    return format(y, ".17g")


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for z, a, r, y in zip(data.z, data.a, data.r, data.y):
        w.writerow([int(z), int(a), int(r), _format_y(float(y)) if r else ""])
    return buf.getvalue()


def write_csv(data: Dataset, path) -> None:
    Path(path).write_text(dataset_to_csv(data), encoding="utf-8")


def parse_csv(text: str) -> Dataset:
    """Parse ``z,a,r,y`` rows; ``y`` must be empty exactly when ``r == 0``.

    Row numbers in errors count the header as row 1.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("file is empty", row=1) from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", row=1)
    z, a, r, y = [], [], [], []
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", row=rowno)
        vals = []
        for col, raw in zip(CSV_HEADER[:3], row[:3]):
            raw = raw.strip()
            if raw not in ("0", "1"):
                raise ParseError(f"{col}={raw!r} is not 0 or 1", row=rowno, column=col)
            vals.append(int(raw))
        raw_y = row[3].strip()
        if vals[2] == 1:
            if not raw_y:
                raise MissingnessMismatch(f"row {rowno}: r=1 but y is empty")
            try:
                yv = float(raw_y)
            except ValueError:
                raise ParseError(f"y={raw_y!r} is not a number", row=rowno, column="y") from None
            if not math.isfinite(yv):
                raise ParseError(f"y={raw_y!r} is not finite", row=rowno, column="y")
        else:
            if raw_y:
                raise MissingnessMismatch(f"row {rowno}: r=0 but y={raw_y!r} is present")
            yv = np.nan
        z.append(vals[0])
        a.append(vals[1])
        r.append(vals[2])
        y.append(yv)
    if not z:
        raise ParseError("no data rows", row=2)
    return Dataset.from_arrays(z, a, r, y)


def read_csv(path) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}") from None
    return parse_csv(text)


def read_joint(path) -> JointLaw:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    return JointLaw.from_json(obj)


def write_joint(joint: JointLaw, path) -> None:
    Path(path).write_text(joint.dumps() + "\n", encoding="utf-8")
