"""CSV ingestion of markets and serialization of reports.

Input schemas (UTF-8, header row required, ``.`` as decimal separator)::

    holdings.csv    bank_id,asset_id,value
    banks.csv       bank_id,equity,other_assets
    assets.csv      asset_id,adv,volatility[,depth]
    returns.csv     asset_id,expected_return
    covariance.csv  K x K matrix; header row and first column hold asset ids

Bank and asset order follow ``banks.csv`` and ``assets.csv``. Pairs absent
from ``holdings.csv`` are zero holdings.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InputError
from .market import DEFAULT_DEPTH_SCALE, Asset, Bank, BipartiteMarket, validate_market, warn_depth_override

HOLDINGS_COLUMNS = ("bank_id", "asset_id", "value")
BANKS_COLUMNS = ("bank_id", "equity", "other_assets")
ASSETS_COLUMNS = ("asset_id", "adv", "volatility")
ASSETS_OPTIONAL = ("depth",)
RETURNS_COLUMNS = ("asset_id", "expected_return")

DEBTRANK_COLUMNS = ("bank_id", "market_share", "debtrank_original", "debtrank_optimized")
FIRESALE_COLUMNS = (
    "initial_defaulter",
    "n_induced_defaults",
    "induced_defaults",
    "final_market_fraction",
    "equity_destroyed",
    "steps",
    "final_avg_leverage",
)
SWEEP_COLUMNS = ("c", "debtrank_mean_original", "debtrank_mean_optimized")


@dataclass(frozen=True)
class MarketFiles:
    holdings: Path
    banks: Path
    assets: Path
    returns: Path | None = None
    covariance: Path | None = None

    @classmethod
    def in_directory(cls, directory) -> "MarketFiles":
        d = Path(directory)
        return cls(
            holdings=d / "holdings.csv",
            banks=d / "banks.csv",
            assets=d / "assets.csv",
            returns=d / "returns.csv",
            covariance=d / "covariance.csv",
        )


@dataclass(frozen=True, eq=False)
class LoadedMarket:
    market: BipartiteMarket
    returns: np.ndarray | None = None
    covariance: np.ndarray | None = None


def _open(path):
    try:
        return open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise InputError("file not found", path) from None
    except OSError as exc:
        raise InputError(f"cannot read file ({exc.strerror})", path) from None


def read_table(path, required: Sequence[str], optional: Sequence[str] = ()) -> tuple[list[str], list[tuple[int, dict]]]:
    """Rows of a headed CSV file as ``(line_number, record)`` pairs.

    Unknown columns are an error; blank lines are skipped.
    """
    with _open(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError("file is empty; a header row is required", path, 1) from None
        except csv.Error as exc:
            raise InputError(f"malformed CSV: {exc}", path, 1) from None
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise InputError(f"missing column(s): {', '.join(missing)}", path, 1)
        unknown = [c for c in header if c not in required and c not in optional]
        if unknown:
            raise InputError(f"unknown column(s): {', '.join(unknown)}", path, 1)
        if len(set(header)) != len(header):
            raise InputError("duplicate column names in header", path, 1)
        rows = []
        try:
            for fields in reader:
                line = reader.line_num
                if not fields or all(not f.strip() for f in fields):
                    continue
                if len(fields) != len(header):
                    raise InputError(f"expected {len(header)} fields, found {len(fields)}", path, line)
                rows.append((line, {h: f.strip() for h, f in zip(header, fields)}))
        except csv.Error as exc:
            raise InputError(f"malformed CSV: {exc}", path, reader.line_num) from None
    return header, rows


def _number(text: str, column: str, path, line: int) -> float:
    if text == "":
        raise InputError(f"empty value in column {column!r}", path, line)
    try:
        return float(text)
    except ValueError:
        raise InputError(f"column {column!r}: cannot parse {text!r} as a number", path, line) from None


def _index(ids: list[str], what: str, path, lines: list[int]) -> dict[str, int]:
    out: dict[str, int] = {}
    for id_, line in zip(ids, lines):
        if id_ == "":
            raise InputError(f"empty {what} id", path, line)
        if id_ in out:
            raise InputError(f"duplicate {what} id {id_!r}", path, line)
        out[id_] = len(out)
    return out


def load_market(files: MarketFiles, depth_scale: float = DEFAULT_DEPTH_SCALE, *, require_optimizer_inputs: bool = False) -> LoadedMarket:
    """Parse and validate a market from its CSV files.

    Returns and covariance are loaded when their paths are given. With
    ``require_optimizer_inputs`` a missing path for either is an error.
    """
    _, bank_rows = read_table(files.banks, BANKS_COLUMNS)
    _, asset_rows = read_table(files.assets, ASSETS_COLUMNS, ASSETS_OPTIONAL)
    bank_idx = _index([r["bank_id"] for _, r in bank_rows], "bank", files.banks, [ln for ln, _ in bank_rows])
    asset_idx = _index([r["asset_id"] for _, r in asset_rows], "asset", files.assets, [ln for ln, _ in asset_rows])
    if not bank_rows:
        raise DomainError(f"{files.banks}: empty market: no banks")
    if not asset_rows:
        raise DomainError(f"{files.assets}: empty market: no assets")

    returns = None
    if files.returns is not None:
        returns = _load_returns(files.returns, asset_idx)
    elif require_optimizer_inputs:
        raise InputError("config field 'returns' is required: no returns file given")

    banks = [
        Bank(
            id=r["bank_id"],
            equity=_number(r["equity"], "equity", files.banks, ln),
            other_assets=_number(r["other_assets"], "other_assets", files.banks, ln),
        )
        for ln, r in bank_rows
    ]
    assets = []
    overridden = []
    for k, (ln, r) in enumerate(asset_rows):
        depth = None
        if r.get("depth", "") != "":
            depth = _number(r["depth"], "depth", files.assets, ln)
            overridden.append(r["asset_id"])
        assets.append(
            Asset(
                id=r["asset_id"],
                adv=_number(r["adv"], "adv", files.assets, ln),
                volatility=_number(r["volatility"], "volatility", files.assets, ln),
                depth=depth,
                expected_return=0.0 if returns is None else float(returns[k]),
            )
        )
    warn_depth_override(overridden)

    V = np.zeros((len(assets), len(banks)))
    seen: dict[tuple[int, int], int] = {}
    _, hold_rows = read_table(files.holdings, HOLDINGS_COLUMNS)
    if not hold_rows:
        raise DomainError(f"{files.holdings}: empty market: no holdings")
    for ln, r in hold_rows:
        b, a = r["bank_id"], r["asset_id"]
        if b not in bank_idx:
            raise InputError(f"unknown bank id {b!r} (not in {Path(files.banks).name})", files.holdings, ln)
        if a not in asset_idx:
            raise InputError(f"unknown asset id {a!r} (not in {Path(files.assets).name})", files.holdings, ln)
        key = (asset_idx[a], bank_idx[b])
        if key in seen:
            raise InputError(f"duplicate holding for ({b!r}, {a!r}); first at line {seen[key]}", files.holdings, ln)
        seen[key] = ln
        V[key] = _number(r["value"], "value", files.holdings, ln)

    try:
        market = BipartiteMarket(assets, banks, V, depth_scale=depth_scale)
    except DomainError as exc:
        raise InputError(str(exc)) from None
    problems = validate_market(market)
    if problems:
        raise InputError("invalid market: " + "; ".join(p.message for p in problems))
    if not (market.holdings.sum() > 0):
        raise DomainError(f"{files.holdings}: empty market: all holdings are zero")

    covariance = None
    if files.covariance is not None:
        covariance = _load_covariance(files.covariance, asset_idx)
    elif require_optimizer_inputs:
        raise InputError("config field 'covariance' is required: no covariance file given")
    return LoadedMarket(market=market, returns=returns, covariance=covariance)


def _load_returns(path, asset_idx: dict[str, int]) -> np.ndarray:
    _, rows = read_table(path, RETURNS_COLUMNS)
    r = np.full(len(asset_idx), np.nan)
    for ln, row in rows:
        a = row["asset_id"]
        if a not in asset_idx:
            raise InputError(f"unknown asset id {a!r}", path, ln)
        if not math.isnan(r[asset_idx[a]]):
            raise InputError(f"duplicate return for asset {a!r}", path, ln)
        r[asset_idx[a]] = _number(row["expected_return"], "expected_return", path, ln)
    missing = [a for a, k in asset_idx.items() if math.isnan(r[k])]
    if missing:
        raise InputError(f"missing expected return for asset(s): {', '.join(missing)}", path)
    return r


def _load_covariance(path, asset_idx: dict[str, int]) -> np.ndarray:
    K = len(asset_idx)
    with _open(path) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError("file is empty; a header row of asset ids is required", path, 1) from None
        cols = header[1:]
        for a in cols:
            if a not in asset_idx:
                raise InputError(f"unknown asset id {a!r} in header", path, 1)
        if len(set(cols)) != len(cols):
            raise InputError("duplicate asset id in header", path, 1)
        col_pos = [asset_idx[a] for a in cols]
        C = np.full((K, K), np.nan)
        seen = set()
        for fields in reader:
            ln = reader.line_num
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(header):
                raise InputError(f"expected {len(header)} fields, found {len(fields)}", path, ln)
            a = fields[0].strip()
            if a not in asset_idx:
                raise InputError(f"unknown asset id {a!r}", path, ln)
            if a in seen:
                raise InputError(f"duplicate row for asset {a!r}", path, ln)
            seen.add(a)
            for name, j, text in zip(cols, col_pos, fields[1:]):
                C[asset_idx[a], j] = _number(text.strip(), name, path, ln)
    missing = sorted({a for a, k in asset_idx.items() if np.isnan(C[k]).any() or np.isnan(C[:, k]).any()})
    if missing:
        raise InputError(f"missing covariance entries for asset(s): {', '.join(missing)}", path)
    return C


def _fmt(x: float) -> str:
    return repr(float(x))


def write_market(loaded: LoadedMarket | BipartiteMarket, directory) -> MarketFiles:
    """Write a market (and returns/covariance if present) in the input schemas."""
    if isinstance(loaded, BipartiteMarket):
        loaded = LoadedMarket(market=loaded)
    m = loaded.market
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = MarketFiles.in_directory(d)
    with open(files.banks, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BANKS_COLUMNS)
        for b in m.banks:
            w.writerow([b.id, _fmt(b.equity), _fmt(b.other_assets)])
    with open(files.assets, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        explicit = any(a.depth is not None for a in m.assets)
        w.writerow(ASSETS_COLUMNS + (ASSETS_OPTIONAL if explicit else ()))
        for a in m.assets:
            row = [a.id, _fmt(a.adv), _fmt(a.volatility)]
            if explicit:
                row.append("" if a.depth is None else _fmt(a.depth))
            w.writerow(row)
    with open(files.holdings, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HOLDINGS_COLUMNS)
        for i, b in enumerate(m.banks):
            for k, a in enumerate(m.assets):
                if m.holdings[k, i] != 0:
                    w.writerow([b.id, a.id, _fmt(m.holdings[k, i])])
    returns = loaded.returns
    if returns is None and any(a.expected_return != 0 for a in m.assets):
        returns = m.expected_returns
    if returns is not None:
        with open(files.returns, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RETURNS_COLUMNS)
            for a, r in zip(m.assets, returns):
                w.writerow([a.id, _fmt(r)])
    else:
        files = MarketFiles(files.holdings, files.banks, files.assets, None, files.covariance)
    if loaded.covariance is not None:
        with open(files.covariance, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["asset_id"] + m.asset_ids)
            for a, row in zip(m.asset_ids, loaded.covariance):
                w.writerow([a] + [_fmt(x) for x in row])
    else:
        files = MarketFiles(files.holdings, files.banks, files.assets, files.returns, None)
    return files


# ---------------------------------------------------------------------------
# reports


def _writer(path):
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: cannot write ({exc.strerror})") from exc
    return fh


def _num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with _writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) or v is None else v for v in row])
    return Path(path)


def read_report_csv(path, columns: Sequence[str]) -> list[dict]:
    """Read a report back, checking it has exactly the documented header."""
    with _open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != tuple(columns):
            raise InputError(f"unexpected header {header!r}; expected {list(columns)!r}", path, 1)
        out = []
        for fields in reader:
            if len(fields) != len(columns):
                raise InputError(f"expected {len(columns)} fields, found {len(fields)}", path, reader.line_num)
            out.append(dict(zip(columns, fields)))
    return out


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path, data: dict) -> Path:
    text = json.dumps(_clean(data), indent=2, sort_keys=True, default=_json_default, allow_nan=False)
    with _writer(path) as fh:
        fh.write(text + "\n")
    return Path(path)


def ensure_output_dir(path) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{d}: cannot create output directory ({exc.strerror})") from exc
    if not os.access(d, os.W_OK):
        raise OSError(f"{d}: output directory is not writable")
    return d
