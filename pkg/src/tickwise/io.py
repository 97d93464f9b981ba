"""File formats: JSON for conditions, allocations and bundles; CSV for bulk rows.

Every JSON document carries ``"schema_version": 1`` and a ``"kind"``.
Floats are written in shortest round-trip form (``repr``), so every file
re-reads to the identical in-memory value.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backtest import MarketData, PeriodResult, ResultTable, Snapshot, Window
from .core import Allocation, MarketConditions, TickSpec, ValidationError
from .volume import SwapEvent

SCHEMA_VERSION = 1

SWAP_COLUMNS = ("timestamp", "pool_id", "price_before", "price_after", "volume_stable")
LIQUIDITY_COLUMNS = ("tick_id", "pool_id", "price_lo", "price_hi", "fee_rate",
                     "liquidity_value_stable")
WINDOW_COLUMNS = ("train_block", "test_block", "train_start", "test_start", "test_end",
                  "open_price", "close_price", "strategy", "fee_income", "reserve_pnl",
                  "hedge_pnl", "return_pct", "d", "hedge_notional")


class SchemaError(ValidationError):
    """A file does not match its schema; ``line`` is 1-based when known."""

    def __init__(self, message: str, field: str | None = None, path=None, line: int | None = None):
        where = str(path) if path is not None else ""
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message, field=field)
        self.path = None if path is None else str(path)
        self.line = line


def fmt(v) -> str:
    """Shortest round-trip text for a float."""
    return repr(float(v))


def _floats(v) -> list[float]:
    return [float(x) for x in v]


# -- JSON plumbing ---------------------------------------------------------

def write_json(path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n", encoding="utf-8")
    return path


def read_json(path, kind: str | None = None) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError("file not found", field="path", path=path) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.msg, path=path, line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise SchemaError("top level must be a JSON object", path=path, line=1)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}",
                          field="schema_version", path=path)
    if kind is not None and doc.get("kind", kind) != kind:
        raise SchemaError(f"expected kind {kind!r}, got {doc.get('kind')!r}", field="kind", path=path)
    return doc


def _need(doc: dict, name: str, path, kind=None):
    if name not in doc:
        raise SchemaError(f"missing field {name!r}", field=name, path=path)
    value = doc[name]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"field {name!r} must be a number", field=name, path=path)
        return float(value)
    if kind is list:
        if not isinstance(value, list):
            raise SchemaError(f"field {name!r} must be a list", field=name, path=path)
        return value
    return value


def _vector(doc: dict, name: str, path) -> np.ndarray:
    raw = _need(doc, name, path, list)
    for k, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{name}[{k}] must be a number", field=name, path=path)
    return np.array(raw, dtype=float)


# -- ticks and conditions --------------------------------------------------

def tick_to_dict(t: TickSpec) -> dict:
    return {"id": t.id, "pool_id": t.pool_id, "price_lo": t.price_lo,
            "price_hi": t.price_hi, "fee_rate": t.fee_rate}


def tick_from_dict(raw: dict, path=None, k: int = 0) -> TickSpec:
    if not isinstance(raw, dict):
        raise SchemaError(f"ticks[{k}] must be an object", field="ticks", path=path)
    for name in ("id", "price_lo", "price_hi", "fee_rate"):
        if name not in raw:
            raise SchemaError(f"ticks[{k}] missing field {name!r}", field=name, path=path)
    try:
        return TickSpec(str(raw["id"]), float(raw["price_lo"]), float(raw["price_hi"]),
                        float(raw["fee_rate"]), str(raw.get("pool_id", "pool")))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"ticks[{k}]: {exc}", field=getattr(exc, "field", "ticks"), path=path) from exc


def conditions_to_dict(mc: MarketConditions) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "market_conditions",
        "current_price": mc.current_price,
        "d": mc.d,
        "ticks": [tick_to_dict(t) for t in mc.ticks],
        "a": _floats(mc.a),
        "b": _floats(mc.b),
        "c": _floats(mc.c),
    }


def conditions_from_dict(doc: dict, path=None, require_c: bool = True) -> MarketConditions:
    ticks = [tick_from_dict(t, path, k) for k, t in enumerate(_need(doc, "ticks", path, list))]
    a = _vector(doc, "a", path)
    b = _vector(doc, "b", path)
    if "c" in doc or require_c:
        c = _vector(doc, "c", path)
    else:
        c = np.zeros_like(a)
    d = _need(doc, "d", path, float)
    price = _need(doc, "current_price", path, float)
    for name, v in (("a", a), ("b", b), ("c", c)):
        if len(v) != len(ticks):
            raise SchemaError(f"{name} has {len(v)} entries for {len(ticks)} ticks", field=name, path=path)
    return MarketConditions(ticks, a, b, c, d, price)


def write_conditions(path, mc: MarketConditions) -> Path:
    return write_json(path, conditions_to_dict(mc))


def read_conditions(path, require_c: bool = True) -> MarketConditions:
    return conditions_from_dict(read_json(path, "market_conditions"), path, require_c)


# -- allocations -----------------------------------------------------------

def allocation_to_dict(alloc: Allocation, tick_ids: Sequence[str], d: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "allocation",
        "problem": alloc.problem,
        "status": alloc.status,
        "d": float(d),
        "dual": float(alloc.dual),
        "objective": float(alloc.objective),
        "kkt_residual": float(alloc.kkt_residual),
        "iterations": int(alloc.iterations),
        "tick_ids": list(tick_ids),
        "x": _floats(alloc.x),
    }


def allocation_from_dict(doc: dict, path=None) -> tuple[Allocation, list[str], float]:
    x = _vector(doc, "x", path)
    ids = [str(i) for i in _need(doc, "tick_ids", path, list)]
    if len(ids) != len(x):
        raise SchemaError("tick_ids and x differ in length", field="x", path=path)
    alloc = Allocation(
        x, _need(doc, "dual", path, float), _need(doc, "objective", path, float),
        _need(doc, "kkt_residual", path, float), str(_need(doc, "status", path)),
        int(_need(doc, "iterations", path, float)), str(_need(doc, "problem", path)),
    )
    return alloc, ids, _need(doc, "d", path, float)


def write_allocation(out_dir, alloc: Allocation, tick_ids: Sequence[str], d: float,
                     stem: str = "allocation") -> tuple[Path, Path]:
    """Write ``<stem>.json`` and a ``tick_id,x`` CSV next to it."""
    out_dir = Path(out_dir)
    jpath = write_json(out_dir / f"{stem}.json", allocation_to_dict(alloc, tick_ids, d))
    cpath = write_csv(out_dir / f"{stem}.csv", ("tick_id", "x"),
                      ((i, fmt(v)) for i, v in zip(tick_ids, alloc.x)))
    return jpath, cpath


def read_allocation(path) -> tuple[Allocation, list[str], float]:
    return allocation_from_dict(read_json(path, "allocation"), path)


def read_allocation_csv(path) -> tuple[list[str], np.ndarray]:
    rows = read_csv(path, ("tick_id", "x"))
    return [r["tick_id"] for r in rows], np.array([_num(r, "x", path) for r in rows])


# -- CSV plumbing ----------------------------------------------------------

def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path, required: Sequence[str]) -> list[dict]:
    """Rows as dicts with ``_line`` holding the 1-based file line."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError("file not found", field="path", path=path) from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("missing header row", path=path, line=1)
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"missing column {missing[0]!r}", field=missing[0], path=path, line=1)
        rows = []
        for row in reader:
            row["_line"] = reader.line_num
            row["_path"] = str(path)
            rows.append(row)
    return rows


def _num(row: dict, name: str, path=None) -> float:
    text = row.get(name)
    try:
        return float(text)
    except (TypeError, ValueError):
        raise SchemaError(f"column {name!r}: not a number: {text!r}", field=name,
                          path=row.get("_path", path), line=row.get("_line")) from None


# -- swaps and liquidity ---------------------------------------------------

def write_swaps(path, events: Sequence[SwapEvent]) -> Path:
    return write_csv(path, SWAP_COLUMNS, (
        (fmt(e.timestamp), e.pool_id, fmt(e.price_before), fmt(e.price_after), fmt(e.volume_stable))
        for e in events
    ))


def read_swaps(path) -> list[SwapEvent]:
    out = []
    for row in read_csv(path, SWAP_COLUMNS):
        try:
            out.append(SwapEvent(_num(row, "timestamp"), row["pool_id"], _num(row, "price_before"),
                                 _num(row, "price_after"), _num(row, "volume_stable")))
        except SchemaError:
            raise
        except ValidationError as exc:
            raise SchemaError(str(exc), field=exc.field, path=path, line=row["_line"]) from exc
    return out


def write_liquidity(path, snapshots: Sequence[Snapshot]) -> Path:
    """Long CSV of one or more snapshots; a ``timestamp`` column separates them."""
    rows = []
    for s in snapshots:
        for t, v in zip(s.ticks, s.liquidity):
            rows.append((t.id, t.pool_id, fmt(t.price_lo), fmt(t.price_hi), fmt(t.fee_rate),
                         fmt(v), fmt(s.timestamp)))
    return write_csv(path, LIQUIDITY_COLUMNS + ("timestamp",), rows)


def read_liquidity(path, meta: dict | None = None) -> list[Snapshot]:
    """Snapshots keyed by timestamp (0 when the column is absent).

    ``meta`` maps repr(timestamp) to ``{"price", "block"}``.
    """
    meta = meta or {}
    groups: dict[float, list[dict]] = {}
    for row in read_csv(path, LIQUIDITY_COLUMNS):
        ts = _num(row, "timestamp") if row.get("timestamp") not in (None, "") else 0.0
        groups.setdefault(ts, []).append(row)
    out = []
    for ts in sorted(groups):
        ticks, values = [], []
        for row in groups[ts]:
            try:
                ticks.append(TickSpec(row["tick_id"], _num(row, "price_lo"), _num(row, "price_hi"),
                                      _num(row, "fee_rate"), row["pool_id"]))
            except SchemaError:
                raise
            except ValidationError as exc:
                raise SchemaError(str(exc), field=exc.field, path=path, line=row["_line"]) from exc
            values.append(_num(row, "liquidity_value_stable"))
        info = meta.get(repr(ts), {})
        price = info.get("price")
        out.append(Snapshot(ticks, values, ts, None if price is None else float(price),
                            info.get("block")))
    if not out:
        raise SchemaError("no liquidity rows", field="tick_id", path=path, line=2)
    return out


# -- market directories ----------------------------------------------------

def write_market(out_dir, data: MarketData) -> Path:
    """``market.json`` + ``liquidity.csv`` + ``swaps.csv`` in ``out_dir``."""
    out_dir = Path(out_dir)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "market",
        "start": float(data.start),
        "end": float(data.end),
        "initial_price": float(data.initial_price),
        "snapshots": [
            {"timestamp": float(s.timestamp), "price": s.price, "block": s.block}
            for s in data.snapshots
        ],
        "blocks": [[float(t), str(label)] for t, label in data.blocks],
    }
    write_json(out_dir / "market.json", doc)
    write_liquidity(out_dir / "liquidity.csv", data.snapshots)
    write_swaps(out_dir / "swaps.csv", data.events)
    return out_dir


def read_market(in_dir) -> MarketData:
    in_dir = Path(in_dir)
    path = in_dir / "market.json"
    doc = read_json(path, "market")
    meta = {}
    for k, s in enumerate(_need(doc, "snapshots", path, list) if "snapshots" in doc else []):
        if not isinstance(s, dict) or "timestamp" not in s:
            raise SchemaError(f"snapshots[{k}] needs a timestamp", field="snapshots", path=path)
        meta[repr(float(s["timestamp"]))] = s
    snapshots = read_liquidity(in_dir / "liquidity.csv", meta)
    events = read_swaps(in_dir / "swaps.csv")
    blocks = []
    for k, item in enumerate(doc.get("blocks", [])):
        if not (isinstance(item, list) and len(item) == 2):
            raise SchemaError(f"blocks[{k}] must be [timestamp, label]", field="blocks", path=path)
        blocks.append((float(item[0]), str(item[1])))
    return MarketData(snapshots, events, _need(doc, "start", path, float),
                      _need(doc, "end", path, float), _need(doc, "initial_price", path, float), blocks)


# -- sweep and backtest tables ---------------------------------------------

def write_sweep(path, d_list: Sequence[float], allocations: Sequence[Allocation],
                tick_ids: Sequence[str], b) -> Path:
    """Long format ``d, tick_id, x, b`` for overlay and per-capital plots."""
    rows = []
    for d, alloc in zip(d_list, allocations):
        for tid, xi, bi in zip(tick_ids, alloc.x, b):
            rows.append((fmt(d), tid, fmt(xi), fmt(bi)))
    return write_csv(path, ("d", "tick_id", "x", "b"), rows)


def read_sweep(path) -> tuple[list[float], list[str], np.ndarray, np.ndarray]:
    """Returns ``(d_list, tick_ids, X, b)`` with ``X[k]`` the allocation at ``d_list[k]``."""
    rows = read_csv(path, ("d", "tick_id", "x", "b"))
    d_list: list[float] = []
    ids: list[str] = []
    xs: dict[float, list[float]] = {}
    b: list[float] = []
    for row in rows:
        d = _num(row, "d")
        if d not in xs:
            d_list.append(d)
            xs[d] = []
        if len(d_list) == 1:
            ids.append(row["tick_id"])
            b.append(_num(row, "b"))
        xs[d].append(_num(row, "x"))
    X = np.array([xs[d] for d in d_list]) if d_list else np.zeros((0, 0))
    return d_list, ids, X, np.array(b)


def write_table(path, table: ResultTable) -> Path:
    """Per-window returns with ``mean`` and ``std`` footer rows."""
    rows = [(tr, te, *(fmt(v) for v in vals)) for tr, te, vals in table.rows]
    rows.append(("mean", "", *(fmt(v) for v in table.mean)))
    rows.append(("std", "", *(fmt(v) for v in table.std)))
    return write_csv(path, ("train_block", "test_block", *table.strategies), rows)


def read_table(path) -> tuple[ResultTable, dict[str, tuple[float, ...]]]:
    """The table plus its footer rows keyed ``mean`` / ``std``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[:2] != ["train_block", "test_block"]:
        raise SchemaError("header must start with train_block,test_block", path=path, line=1)
    strategies = tuple(header[2:])
    rows, footer = [], {}
    for row in read_csv(path, header):
        vals = tuple(_num(row, s) for s in strategies)
        if row["train_block"] in ("mean", "std") and row["test_block"] == "":
            footer[row["train_block"]] = vals
        else:
            rows.append((row["train_block"], row["test_block"], vals))
    return ResultTable(strategies, rows), footer


def write_window_audit(path, windows) -> Path:
    rows = []
    for wr in windows:
        w = wr.window
        for name, r in wr.results.items():
            rows.append((w.train_label, w.test_label, fmt(w.train_start), fmt(w.test_start),
                         fmt(w.test_end), fmt(w.open_price), fmt(w.close_price), name,
                         fmt(r.fee_income), fmt(r.reserve_pnl), fmt(r.hedge_pnl),
                         fmt(r.return_pct), fmt(r.d), fmt(wr.hedge_notional[name])))
    return write_csv(path, WINDOW_COLUMNS, rows)


def read_window_audit(path) -> list[tuple[Window, PeriodResult, float]]:
    out = []
    for row in read_csv(path, WINDOW_COLUMNS):
        w = Window(_num(row, "train_start"), _num(row, "test_start"), _num(row, "test_end"),
                   _num(row, "open_price"), _num(row, "close_price"),
                   row["train_block"], row["test_block"])
        r = PeriodResult(row["strategy"], _num(row, "fee_income"), _num(row, "reserve_pnl"),
                         _num(row, "hedge_pnl"), _num(row, "return_pct"), _num(row, "d"))
        out.append((w, r, _num(row, "hedge_notional")))
    return out


def write_estimates(path, ticks: Sequence[TickSpec], a, b, c) -> Path:
    return write_csv(path, ("tick_id", "pool_id", "price_lo", "price_hi", "fee_rate", "a", "b", "c"), (
        (t.id, t.pool_id, fmt(t.price_lo), fmt(t.price_hi), fmt(t.fee_rate), fmt(ai), fmt(bi), fmt(ci))
        for t, ai, bi, ci in zip(ticks, a, b, c)
    ))


def read_estimates(path) -> tuple[list[TickSpec], np.ndarray, np.ndarray, np.ndarray]:
    rows = read_csv(path, ("tick_id", "pool_id", "price_lo", "price_hi", "fee_rate", "a", "b", "c"))
    ticks = [TickSpec(r["tick_id"], _num(r, "price_lo"), _num(r, "price_hi"), _num(r, "fee_rate"),
                      r["pool_id"]) for r in rows]
    cols = [np.array([_num(r, k) for r in rows]) for k in ("a", "b", "c")]
    return ticks, cols[0], cols[1], cols[2]


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for ``json``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def finite_or_none(v: float):
    return float(v) if math.isfinite(v) else None
