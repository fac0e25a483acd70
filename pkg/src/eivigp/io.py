"""Reading and writing observation files.

Files are comma-delimited UTF-8 text with an optional single header line.
Instrumental files have columns ``year, level_m, sigma_m``; proxy files have
``rsl_m, year_ad, rsl_sigma_m, age_2sigma_yr`` and an optional ``site``.
"""

from __future__ import annotations

import csv
import math
import os
from typing import Iterable, NamedTuple, Sequence

from .kernel import ParameterDomainError
from .model import GiaParams, ObservationRecord

__all__ = [
    "InputError",
    "SITE_GIA",
    "ProxyData",
    "ingest_instrumental",
    "ingest_proxy",
    "load_proxy",
    "write_instrumental",
    "write_proxy",
]

# GIA rates (mm/yr) of the North Carolina salt-marsh sites
SITE_GIA = {
    "tump point": GiaParams(gamma=0.9, t0=2010.0),
    "sand point": GiaParams(gamma=1.0, t0=2010.0),
}


class InputError(ValueError):
    """Malformed or invalid input file."""


class ProxyData(NamedTuple):
    records: list[ObservationRecord]
    gia: list[GiaParams] | None
    sites: list[str] | None


def _site_key(name: str) -> str:
    return " ".join(name.replace("_", " ").lower().split())


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _rows(path) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        first = True
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip() for c in row]
            if not row or all(c == "" for c in row):
                continue
            if first:
                first = False
                if not _is_number(row[0]):
                    continue  # header
            yield lineno, row


def _float(text: str, lineno: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"line {lineno}: {column} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise InputError(f"line {lineno}: {column} is not finite: {text!r}")
    return value


def _record(lineno: int, **kw) -> ObservationRecord:
    try:
        return ObservationRecord(**kw)
    except ParameterDomainError as exc:
        raise InputError(f"line {lineno}: {exc}") from None


def ingest_instrumental(path: str | os.PathLike) -> list[ObservationRecord]:
    """Read a tide-gauge style file: year AD, level (m), 1-sigma level error (m).

    Ages are exact, so every record gets ``age_sd = 0``. Rows keep file order.
    """
    out = []
    for lineno, row in _rows(path):
        if len(row) != 3:
            raise InputError(f"line {lineno}: expected 3 columns, got {len(row)}")
        year = _float(row[0], lineno, "year")
        level = _float(row[1], lineno, "level_m")
        sd = _float(row[2], lineno, "sigma_m")
        out.append(_record(lineno, level=level, level_sd=sd, age=year, age_sd=0.0))
    if not out:
        raise InputError(f"{os.fspath(path)}: no data rows")
    return out


def load_proxy(path: str | os.PathLike, site_gia: dict[str, GiaParams] | None = None) -> ProxyData:
    """Read a proxy file and resolve its optional site column to GIA parameters.

    The fourth column is a 2-sigma age error and is halved. When a site column
    is present every site must appear in ``site_gia`` (default :data:`SITE_GIA`).
    """
    table = {_site_key(k): v for k, v in (SITE_GIA if site_gia is None else site_gia).items()}
    records, sites = [], []
    width = None
    for lineno, row in _rows(path):
        if len(row) not in (4, 5):
            raise InputError(f"line {lineno}: expected 4 or 5 columns, got {len(row)}")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise InputError(f"line {lineno}: expected {width} columns, got {len(row)}")
        level = _float(row[0], lineno, "rsl_m")
        year = _float(row[1], lineno, "year_ad")
        sd = _float(row[2], lineno, "rsl_sigma_m")
        age2 = _float(row[3], lineno, "age_2sigma_yr")
        if age2 < 0:
            raise InputError(f"line {lineno}: 2-sigma age error must be non-negative, got {age2}")
        records.append(_record(lineno, level=level, level_sd=sd, age=year, age_sd=age2 / 2.0))
        if width == 5:
            if _site_key(row[4]) not in table:
                raise InputError(f"line {lineno}: no GIA rate known for site {row[4]!r}")
            sites.append(row[4])
    if not records:
        raise InputError(f"{os.fspath(path)}: no data rows")
    if width == 5:
        return ProxyData(records, [table[_site_key(s)] for s in sites], sites)
    return ProxyData(records, None, None)


def ingest_proxy(path: str | os.PathLike) -> list[ObservationRecord]:
    """Read a proxy file; see :func:`load_proxy` for the GIA mapping of sites."""
    return load_proxy(path).records


def write_instrumental(path: str | os.PathLike, records: Sequence[ObservationRecord], header: bool = True) -> None:
    """Write records in the instrumental layout; age errors must be zero."""
    if any(r.age_sd != 0 for r in records):
        raise InputError("instrumental records cannot carry age errors")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(["year", "level_m", "sigma_m"])
        for r in records:
            w.writerow([repr(r.age), repr(r.level), repr(r.level_sd)])


def write_proxy(path: str | os.PathLike, records: Sequence[ObservationRecord],
                sites: Sequence[str] | None = None, header: bool = True) -> None:
    """Write records in the proxy layout, doubling the age errors back to 2-sigma."""
    if sites is not None and len(sites) != len(records):
        raise InputError("need one site per record")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(["rsl_m", "year_ad", "rsl_sigma_m", "age_2sigma_yr"] + (["site"] if sites else []))
        for i, r in enumerate(records):
            row = [repr(r.level), repr(r.age), repr(r.level_sd), repr(2.0 * r.age_sd)]
            if sites is not None:
                row.append(sites[i])
            w.writerow(row)
