"""Reader/writer for MATPOWER-style ``.m`` case files.

Only the ``mpc.baseMVA``, ``mpc.bus``, ``mpc.branch``, ``mpc.gen`` and
``mpc.gencost`` blocks are read.  Values are kept exactly as written (degrees,
MW, MVA); unit conversion happens in :mod:`opfbench.grid`.
"""

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    CaseFormatError,
    DuplicateBusId,
    MalformedRow,
    MissingTable,
    NoSlackBus,
    UnsupportedCostModel,
)

# minimum column counts of the MATPOWER v2 format
MIN_COLS = {"bus": 13, "branch": 11, "gen": 10, "gencost": 5}
TABLES = ("bus", "branch", "gen", "gencost")

# bus columns
BUS_I, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA, BASE_KV, ZONE, VMAX, VMIN = range(13)
PQ, PV, REF, NONE = 1, 2, 3, 4
# branch columns
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS = range(11)
# gen columns
GEN_BUS, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN = range(10)
# gencost columns
MODEL, STARTUP, SHUTDOWN, NCOST, COST = range(5)
POLYNOMIAL = 2


@dataclass(frozen=True, eq=False)
class RawCase:
    """Tables of a case file, unconverted.  Each table is a 2-D float array."""

    name: str
    base_mva: float
    bus: np.ndarray
    branch: np.ndarray
    gen: np.ndarray
    gencost: np.ndarray

    def __post_init__(self):
        for t in TABLES:
            getattr(self, t).flags.writeable = False

    @property
    def counts(self):
        return tuple(len(getattr(self, t)) for t in TABLES)

    def same_as(self, other):
        if self.base_mva != other.base_mva:
            return False
        for t in TABLES:
            a, b = getattr(self, t), getattr(other, t)
            if a.shape != b.shape or not np.array_equal(a, b):
                return False
        return True

    def __eq__(self, other):
        return isinstance(other, RawCase) and self.same_as(other)

    __hash__ = None


_NUM = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|^[+-]?(Inf|inf|NaN|nan)$")
_BLOCK_START = re.compile(r"mpc\.(\w+)\s*=\s*\[")
_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([^;\s]+)\s*;")
_FUNC = re.compile(r"function\s+\w+\s*=\s*(\w+)")


def _strip_comment(line):
    # '%' starts a comment unless it sits inside a quoted string
    quote = False
    for i, ch in enumerate(line):
        if ch == "'":
            quote = not quote
        elif ch == "%" and not quote:
            return line[:i]
    return line


def _to_float(tok):
    if not _NUM.match(tok):
        raise ValueError(tok)
    return float(tok)


def _read_block(lines, start, table, head):
    """Collect matrix rows starting with ``head`` (the text after '[')."""
    rows, row_lines = [], []
    cur, cur_line = [], None
    i, text = start, head
    while True:
        end = text.find("]")
        body = text if end < 0 else text[:end]
        cont = body.rstrip().endswith("...")
        if cont:
            body = body.rstrip()[:-3]
        parts = body.split(";")
        for k, part in enumerate(parts):
            toks = part.replace(",", " ").split()
            if toks and cur_line is None:
                cur_line = i + 1
            try:
                cur.extend(_to_float(t) for t in toks)
            except ValueError as exc:
                raise MalformedRow(table, i + 1, f"not a number: {exc}") from None
            last = k == len(parts) - 1
            # ';' always closes a row, a line break closes it unless continued
            if cur and (not last or not cont):
                rows.append(cur)
                row_lines.append(cur_line)
                cur, cur_line = [], None
        if end >= 0:
            return rows, row_lines, i
        i += 1
        if i >= len(lines):
            raise MalformedRow(table, len(lines), "block is never closed with ']'")
        text = _strip_comment(lines[i])


def parse_case(text, name=None):
    """Parse case text into a :class:`RawCase`."""
    lines = text.splitlines()
    blocks = {}
    base = None
    func_name = None
    i = 0
    while i < len(lines):
        line = _strip_comment(lines[i])
        if func_name is None:
            m = _FUNC.search(line)
            if m:
                func_name = m.group(1)
        m = _SCALAR.search(line)
        if m:
            try:
                base = float(m.group(1))
            except ValueError:
                raise MalformedRow("baseMVA", i + 1, f"not a number: {m.group(1)}") from None
        m = _BLOCK_START.search(line)
        if m and m.group(1) in TABLES:
            tname = m.group(1)
            rows, row_lines, i = _read_block(lines, i, tname, line[m.end():])
            blocks[tname] = (rows, row_lines)
        i += 1

    if base is None:
        raise MissingTable("baseMVA")
    if not base > 0:
        raise CaseFormatError(f"baseMVA must be positive, got {base}")
    tables = {}
    for t in TABLES:
        if t not in blocks:
            raise MissingTable(t)
        rows, row_lines = blocks[t]
        if not rows:
            raise MissingTable(t)
        width = len(rows[0])
        for r, ln in zip(rows, row_lines):
            if len(r) != width:
                raise MalformedRow(t, ln, f"expected {width} values, found {len(r)}")
            if len(r) < MIN_COLS[t]:
                raise MalformedRow(t, ln, f"needs at least {MIN_COLS[t]} columns, found {len(r)}")
        tables[t] = np.array(rows, dtype=float)

    lines_of = {t: blocks[t][1] for t in TABLES}
    _validate(tables, lines_of)
    br = tables["branch"]
    br[br[:, TAP] == 0, TAP] = 1.0
    return RawCase(
        name=name or func_name or "case",
        base_mva=base,
        **tables,
    )


def _validate(tables, lines_of):
    bus = tables["bus"]
    seen = {}
    for k, bid in enumerate(bus[:, BUS_I]):
        if bid in seen:
            raise DuplicateBusId(_fmt(bid), lines_of["bus"][k])
        seen[bid] = k
    for k, bt in enumerate(bus[:, BUS_TYPE]):
        if bt not in (PQ, PV, REF, NONE):
            raise MalformedRow("bus", lines_of["bus"][k], f"unknown bus type {_fmt(bt)}")
    nref = int(np.sum(bus[:, BUS_TYPE] == REF))
    if nref != 1:
        raise NoSlackBus(nref)
    for t, cols in (("branch", (F_BUS, T_BUS)), ("gen", (GEN_BUS,))):
        for k, row in enumerate(tables[t]):
            for c in cols:
                if row[c] not in seen:
                    raise MalformedRow(t, lines_of[t][k], f"references unknown bus {_fmt(row[c])}")
    gc = tables["gencost"]
    ng = len(tables["gen"])
    if len(gc) not in (ng, 2 * ng):
        raise CaseFormatError(f"gencost has {len(gc)} rows for {ng} generators")
    for k, row in enumerate(gc):
        ln = lines_of["gencost"][k]
        if row[MODEL] != POLYNOMIAL:
            raise UnsupportedCostModel(
                f"gencost row at line {ln} uses model {_fmt(row[MODEL])}; only polynomial (2) is supported"
            )
        n = int(row[NCOST])
        if n != row[NCOST] or n < 1 or n > 3:
            raise UnsupportedCostModel(f"gencost row at line {ln}: polynomial degree above 2 is not supported")
        if COST + n > len(row):
            raise MalformedRow("gencost", ln, f"declares {n} coefficients but row is too short")


def _fmt(v):
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def serialize_case(raw):
    """Write a RawCase back as case text that :func:`parse_case` reads identically."""
    out = [f"function mpc = {raw.name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(raw.base_mva)};", ""]
    for t in TABLES:
        out.append(f"mpc.{t} = [")
        for row in getattr(raw, t):
            out.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
        out.append("];")
        out.append("")
    return "\n".join(out)


def case_fingerprint(raw):
    """sha256 over baseMVA and every table (shape + little-endian float64 bytes)."""
    h = hashlib.sha256()
    h.update(b"opfbench-case-v1\0")
    h.update(np.float64(raw.base_mva).astype("<f8").tobytes())
    for t in TABLES:
        a = np.ascontiguousarray(getattr(raw, t), dtype="<f8")
        h.update(t.encode() + b"\0")
        h.update(np.array(a.shape, dtype="<i8").tobytes())
        h.update(a.tobytes())
    return h.hexdigest()


def available_cases():
    root = resources.files("opfbench") / "cases"
    return sorted(p.name[:-2] for p in root.iterdir() if p.name.endswith(".m"))


def load_case(name_or_path):
    """Load a shipped case by name ('case9', 'case_ieee30', ...) or any file path."""
    p = Path(name_or_path)
    if p.suffix == ".m" and p.exists():
        return parse_case(p.read_text(encoding="utf-8"), name=p.stem)
    if p.exists() and p.is_file():
        return parse_case(p.read_text(encoding="utf-8"), name=p.stem)
    res = resources.files("opfbench") / "cases" / f"{p.name.removesuffix('.m')}.m"
    if not res.is_file():
        raise FileNotFoundError(f"no case file '{name_or_path}' (shipped: {', '.join(available_cases())})")
    return parse_case(res.read_text(encoding="utf-8"), name=p.name.removesuffix(".m"))


def case_text(name_or_path):
    p = Path(name_or_path)
    if p.exists() and p.is_file():
        return p.read_text(encoding="utf-8")
    res = resources.files("opfbench") / "cases" / f"{p.name.removesuffix('.m')}.m"
    return res.read_text(encoding="utf-8")
