"""Loading, feature engineering, normalization, and splitting of mixture records.

The expected schema is eight mixture-design quantities plus a compressive
strength target, one record per row. Quantities other than age are dosages in
kg per cubic meter; age is in days and strength in MPa.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    DivisionByZero,
    EmptyData,
    EmptyTable,
    InvalidConfigFile,
    InvalidRecord,
    MissingFile,
    MissingValue,
    ParseError,
    SchemaMismatch,
    TooFewRecords,
    UnknownGroup,
)

CANONICAL_FEATURES = (
    "cement",
    "slag",
    "fly_ash",
    "water",
    "superplasticizer",
    "coarse_agg",
    "fine_agg",
    "age",
)
TARGET_COLUMN = "strength"

# Accepted header spellings, keyed by lowercased header with spaces, dashes and
# parenthesized units stripped. A user-supplied column_map takes precedence.
_HEADER_ALIASES = {
    "cement": "cement",
    "slag": "slag",
    "blastfurnaceslag": "slag",
    "blast_furnace_slag": "slag",
    "ash": "fly_ash",
    "flyash": "fly_ash",
    "fly_ash": "fly_ash",
    "water": "water",
    "superplastic": "superplasticizer",
    "superplasticizer": "superplasticizer",
    "coarseagg": "coarse_agg",
    "coarse_agg": "coarse_agg",
    "coarseaggregate": "coarse_agg",
    "coarse_aggregate": "coarse_agg",
    "fineagg": "fine_agg",
    "fine_agg": "fine_agg",
    "fineaggregate": "fine_agg",
    "fine_aggregate": "fine_agg",
    "age": "age",
    "strength": "strength",
    "compressivestrength": "strength",
    "compressive_strength": "strength",
    "concretecompressivestrength": "strength",
    "csmpa": "strength",
}


@dataclass(frozen=True)
class RawDataset:
    """Parsed records: features in canonical column order, target in MPa."""

    features: np.ndarray  # (n, 8) float64
    target: np.ndarray  # (n,) float64

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    def column(self, name: str) -> np.ndarray:
        return self.features[:, CANONICAL_FEATURES.index(name)]


def _normalize_header(name: str) -> str:
    base = name.strip().lower()
    if "(" in base:
        base = base[: base.index("(")]
    for ch in (" ", "-", "."):
        base = base.replace(ch, "")
    return base.strip("_")


def _resolve_header(header: list[str], column_map: dict | None) -> dict[str, int]:
    """Map each canonical column name to its position in the file header."""
    explicit = dict(column_map or {})
    positions: dict[str, int] = {}
    wanted = CANONICAL_FEATURES + (TARGET_COLUMN,)
    stripped = [h.strip() for h in header]
    for canonical in wanted:
        if canonical in explicit:
            source = explicit[canonical]
            if source not in stripped:
                raise SchemaMismatch(
                    f"mapped column {source!r} for {canonical!r} not in header"
                )
            positions[canonical] = stripped.index(source)
            continue
        found = None
        for pos, name in enumerate(stripped):
            if _HEADER_ALIASES.get(_normalize_header(name)) == canonical:
                found = pos
                break
        if found is None:
            raise SchemaMismatch(f"column for {canonical!r} not found in header")
        positions[canonical] = found
    if len(set(positions.values())) != len(positions):
        raise SchemaMismatch("two canonical columns map to the same file column")
    return positions


def load_csv(path: str, column_map: dict | None = None) -> RawDataset:
    """Parse a delimited text file with a header row into a RawDataset.

    Raises MissingFile, SchemaMismatch, ParseError (with row and column),
    MissingValue, InvalidRecord, or EmptyData. Row numbers in errors are
    1-based data-row numbers (the header is row 0).
    """
    try:
        handle = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise MissingFile(f"cannot open {path!r}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyData(f"{path!r} is empty") from None
        positions = _resolve_header(header, column_map)
        names = CANONICAL_FEATURES + (TARGET_COLUMN,)
        rows: list[list[float]] = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(
                    row_no, "", f"expected {len(header)} fields, found {len(row)}"
                )
            record = []
            for name in names:
                cell = row[positions[name]].strip()
                if not cell:
                    raise MissingValue(row_no, name)
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(row_no, name, f"not a number: {cell!r}") from None
                if not np.isfinite(value):
                    raise ParseError(row_no, name, f"non-finite value: {cell!r}")
                record.append(value)
            rows.append(record)
        if not rows:
            raise EmptyData(f"{path!r} has a header but no data rows")
    table = np.array(rows, dtype=np.float64)
    features, target = table[:, :8], table[:, 8]
    _validate_records(features, target)
    return RawDataset(features=features, target=target)


def _validate_records(features: np.ndarray, target: np.ndarray) -> None:
    names = CANONICAL_FEATURES
    for j, name in enumerate(names):
        bad = np.flatnonzero(features[:, j] < 0.0)
        if bad.size:
            raise InvalidRecord(int(bad[0]) + 1, f"negative {name}")
    bad = np.flatnonzero(features[:, names.index("age")] <= 0.0)
    if bad.size:
        raise InvalidRecord(int(bad[0]) + 1, "age must be positive")
    bad = np.flatnonzero(target <= 0.0)
    if bad.size:
        raise InvalidRecord(int(bad[0]) + 1, "strength must be positive")


# --- feature groups ----------------------------------------------------------

Deriver = Callable[[RawDataset], np.ndarray]


@dataclass(frozen=True)
class FeatureGroup:
    """A named selection of raw and derived input variables."""

    tag: str
    feature_names: tuple[str, ...]
    derivations: tuple[tuple[str, Deriver], ...]

    @property
    def width(self) -> int:
        return len(self.feature_names)


def _raw(name: str) -> tuple[str, Deriver]:
    return name, lambda raw: raw.column(name)


def _binder(raw: RawDataset) -> np.ndarray:
    return raw.column("cement") + raw.column("slag") + raw.column("fly_ash")


def _aggregate(raw: RawDataset) -> np.ndarray:
    return raw.column("coarse_agg") + raw.column("fine_agg")


def _fluidity(raw: RawDataset) -> np.ndarray:
    return raw.column("water") + raw.column("superplasticizer")


def _scm(raw: RawDataset) -> np.ndarray:
    return raw.column("slag") + raw.column("fly_ash")


def _checked_binder(raw: RawDataset) -> np.ndarray:
    binder = _binder(raw)
    bad = np.flatnonzero(binder == 0.0)
    if bad.size:
        raise DivisionByZero(int(bad[0]) + 1, "binder content is zero")
    return binder


def _water_over_binder(raw: RawDataset) -> np.ndarray:
    return raw.column("water") / _checked_binder(raw)


def _aggregate_over_binder(raw: RawDataset) -> np.ndarray:
    return _aggregate(raw) / _checked_binder(raw)


def _sp_over_binder(raw: RawDataset) -> np.ndarray:
    return raw.column("superplasticizer") / _checked_binder(raw)


def _group(tag: str, derivations: tuple[tuple[str, Deriver], ...]) -> FeatureGroup:
    return FeatureGroup(
        tag=tag,
        feature_names=tuple(name for name, _ in derivations),
        derivations=derivations,
    )


FEATURE_GROUPS: dict[str, FeatureGroup] = {
    "A": _group("A", tuple(_raw(name) for name in CANONICAL_FEATURES)),
    "B": _group("B", (_raw("cement"), _raw("water"), _raw("superplasticizer"), _raw("age"))),
    "C": _group(
        "C",
        (
            ("binder", _binder),
            ("aggregate", _aggregate),
            ("fluidity", _fluidity),
            ("water_binder_ratio", _water_over_binder),
            ("aggregate_binder_ratio", _aggregate_over_binder),
            ("sp_binder_ratio", _sp_over_binder),
            _raw("age"),
        ),
    ),
    "D": _group(
        "D",
        (
            _raw("cement"),
            _raw("slag"),
            _raw("fly_ash"),
            _raw("water"),
            _raw("superplasticizer"),
            ("aggregate", _aggregate),
            _raw("age"),
        ),
    ),
    "E": _group(
        "E",
        (
            _raw("cement"),
            ("scm", _scm),
            _raw("water"),
            _raw("superplasticizer"),
            ("aggregate", _aggregate),
            _raw("age"),
        ),
    ),
}


def get_group(tag: str) -> FeatureGroup:
    try:
        return FEATURE_GROUPS[tag.upper()]
    except KeyError:
        known = ", ".join(sorted(FEATURE_GROUPS))
        raise UnknownGroup(f"unknown feature group {tag!r}; choose one of {known}") from None


def apply_feature_group(raw: RawDataset, group: FeatureGroup) -> np.ndarray:
    """Assemble the group's unnormalized feature matrix, one column per name."""
    if raw.n_rows == 0:
        raise EmptyTable("no records to derive features from")
    columns = [deriver(raw) for _, deriver in group.derivations]
    return np.column_stack(columns).astype(np.float64)


# --- normalization -----------------------------------------------------------


@dataclass(frozen=True)
class Normalizer:
    """Per-column min-max scaling to [0, 1], plus the same for the target.

    Columns with zero range map to 0 everywhere; their inverse maps back to
    the constant. Fitted on the full table before splitting so every graph
    node lives in the same coordinate system.
    """

    feature_min: np.ndarray  # (d,)
    feature_max: np.ndarray  # (d,)
    target_min: float
    target_max: float

    def normalize(self, table: np.ndarray) -> np.ndarray:
        span = self.feature_max - self.feature_min
        safe = np.where(span == 0.0, 1.0, span)
        out = (np.asarray(table, dtype=np.float64) - self.feature_min) / safe
        return np.where(span == 0.0, 0.0, out)

    def normalize_target(self, values: np.ndarray) -> np.ndarray:
        span = self.target_max - self.target_min
        if span == 0.0:
            return np.zeros_like(np.asarray(values, dtype=np.float64))
        return (np.asarray(values, dtype=np.float64) - self.target_min) / span

    def denormalize_target(self, values: np.ndarray) -> np.ndarray:
        span = self.target_max - self.target_min
        return np.asarray(values, dtype=np.float64) * span + self.target_min

    def as_dict(self) -> dict:
        return {
            "feature_min": self.feature_min.tolist(),
            "feature_max": self.feature_max.tolist(),
            "target_min": self.target_min,
            "target_max": self.target_max,
        }

    @staticmethod
    def from_dict(data: dict) -> "Normalizer":
        return Normalizer(
            feature_min=np.asarray(data["feature_min"], dtype=np.float64),
            feature_max=np.asarray(data["feature_max"], dtype=np.float64),
            target_min=float(data["target_min"]),
            target_max=float(data["target_max"]),
        )


def fit_normalizer(table: np.ndarray, target: np.ndarray) -> Normalizer:
    table = np.asarray(table, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if table.size == 0 or table.shape[0] == 0:
        raise EmptyTable("cannot fit a normalizer on an empty table")
    return Normalizer(
        feature_min=table.min(axis=0),
        feature_max=table.max(axis=0),
        target_min=float(target.min()),
        target_max=float(target.max()),
    )


@dataclass(frozen=True)
class FeatureTable:
    """Normalized inputs ready for graph construction and training."""

    features: np.ndarray  # (n, d) in [0, 1]
    target: np.ndarray  # (n,) normalized
    target_mpa: np.ndarray  # (n,) original units
    normalizer: Normalizer
    feature_names: tuple[str, ...]
    group_tag: str

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])


def build_feature_table(raw: RawDataset, group: FeatureGroup) -> FeatureTable:
    unnormalized = apply_feature_group(raw, group)
    normalizer = fit_normalizer(unnormalized, raw.target)
    return FeatureTable(
        features=normalizer.normalize(unnormalized),
        target=normalizer.normalize_target(raw.target),
        target_mpa=raw.target.copy(),
        normalizer=normalizer,
        feature_names=group.feature_names,
        group_tag=group.tag,
    )


# --- splitting ----------------------------------------------------------------


@dataclass(frozen=True)
class SplitMasks:
    """Sorted row indices for the 70/15/15 train, validation and test sets."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    @property
    def val_test(self) -> np.ndarray:
        return np.sort(np.concatenate([self.val, self.test]))


def split(n: int, seed: int) -> SplitMasks:
    """Deterministic shuffled split: floor(0.70 n) train, floor(0.15 n) val,
    the remainder test. Requires n >= 10 so every part is nonempty."""
    if n < 10:
        raise TooFewRecords(f"need at least 10 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(0.70 * n))
    n_val = int(np.floor(0.15 * n))
    return SplitMasks(
        train=np.sort(order[:n_train]),
        val=np.sort(order[n_train : n_train + n_val]),
        test=np.sort(order[n_train + n_val :]),
        seed=seed,
    )


# --- run configuration ---------------------------------------------------------


def load_config(path: str) -> dict:
    """Read an optional run-configuration file.

    JSON is always supported; files ending in .toml are parsed with the
    standard-library parser when the interpreter provides one. Recognized
    keys: "column_map" (canonical name -> file header) and "seed".
    """
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as exc:
        raise MissingFile(f"cannot open {path!r}: {exc}") from exc
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            raise InvalidConfigFile(
                "TOML config files need Python 3.11+; use JSON instead"
            ) from None
        try:
            data = tomllib.loads(blob.decode("utf-8"))
        except Exception as exc:
            raise InvalidConfigFile(f"cannot parse {path!r}: {exc}") from exc
    else:
        try:
            data = json.loads(blob.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidConfigFile(f"cannot parse {path!r}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfigFile("config root must be a table of keys")
    known = {"column_map", "seed"}
    unknown = set(data) - known
    if unknown:
        raise InvalidConfigFile(f"unknown config keys: {sorted(unknown)}")
    if "column_map" in data:
        cmap = data["column_map"]
        if not isinstance(cmap, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in cmap.items()
        ):
            raise InvalidConfigFile("column_map must map canonical names to headers")
        bad = set(cmap) - set(CANONICAL_FEATURES) - {TARGET_COLUMN}
        if bad:
            raise InvalidConfigFile(f"column_map has unknown canonical names: {sorted(bad)}")
    if "seed" in data and not isinstance(data["seed"], int):
        raise InvalidConfigFile("seed must be an integer")
    return data
