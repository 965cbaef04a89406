"""Longitudinal panel data: ingestion, standardization and train/holdout split."""

from __future__ import annotations

import collections
import csv
import dataclasses
import datetime as dt
import logging
import warnings
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


@dataclasses.dataclass(frozen=True)
class Schema:
    """Mapping from column roles to CSV header names."""

    person_id: str = "person_id"
    date: str = "date"
    outcome: str = "outcome"
    covariates: tuple = ()
    risk_group: str | None = None
    missing: str = "drop"  # or "abort"

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown schema keys: {sorted(extra)}")
        d = dict(d)
        if "covariates" in d:
            if isinstance(d["covariates"], str) or not d["covariates"]:
                raise ConfigError("schema.covariates must be a non-empty list of column names")
            d["covariates"] = tuple(d["covariates"])
        schema = cls(**d)
        if schema.missing not in ("drop", "abort"):
            raise ConfigError("schema.missing must be 'drop' or 'abort'")
        return schema


@dataclasses.dataclass(frozen=True)
class StandardizationParams:
    mean: np.ndarray
    sd: np.ndarray
    constant: np.ndarray  # bool mask; these columns map to zero

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationParams":
        return cls(
            np.asarray(d["mean"], dtype=float),
            np.asarray(d["sd"], dtype=float),
            np.asarray(d["constant"], dtype=bool),
        )


@dataclasses.dataclass(frozen=True, eq=False)
class PanelDataset:
    """Observations grouped by person, in occasion order.

    Rows are sorted by person (first appearance in the source) and then by
    occasion. ``person[r]`` is the row-to-person incidence; ``offsets`` gives
    the CSR row range of each person.
    """

    person_ids: np.ndarray  # (m,) str
    person: np.ndarray  # (N,) int64, index into person_ids
    occasion: np.ndarray  # (N,) int64, 1-based
    dates: np.ndarray  # (N,) datetime64[D]
    X: np.ndarray  # (N, p)
    y: np.ndarray  # (N,) int8
    risk_group: np.ndarray  # (N,) int64, 0 when missing
    covariate_names: tuple
    standardized: bool = False

    def __post_init__(self):
        for arr in (self.person_ids, self.person, self.occasion, self.dates,
                    self.X, self.y, self.risk_group):
            arr.setflags(write=False)

    @property
    def N(self) -> int:
        return int(self.y.shape[0])

    @property
    def m(self) -> int:
        return int(self.person_ids.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_i(self) -> np.ndarray:
        return np.bincount(self.person, minlength=self.m)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_i)]).astype(np.int64)

    @property
    def has_risk_group(self) -> bool:
        return bool(np.any(self.risk_group > 0))

    def incidence_matrix(self) -> sparse.csr_matrix:
        """The N x m binary matrix W with one 1 per row."""
        return sparse.csr_matrix(
            (np.ones(self.N), (np.arange(self.N), self.person)), shape=(self.N, self.m)
        )

    def rows_of(self, person_id: str) -> np.ndarray:
        idx = np.flatnonzero(self.person_ids == person_id)
        if idx.size == 0:
            raise KeyError(person_id)
        off = self.offsets
        return np.arange(off[idx[0]], off[idx[0] + 1])

    def replace(self, **changes) -> "PanelDataset":
        return dataclasses.replace(self, **changes)

    def subset(self, mask) -> "PanelDataset":
        """Rows where ``mask`` holds; occasion indices are kept, persons re-indexed."""
        mask = np.asarray(mask, dtype=bool)
        keep_person = np.unique(self.person[mask])
        remap = np.full(self.m, -1, dtype=np.int64)
        remap[keep_person] = np.arange(keep_person.size)
        return PanelDataset(
            person_ids=self.person_ids[keep_person],
            person=remap[self.person[mask]],
            occasion=self.occasion[mask],
            dates=self.dates[mask],
            X=self.X[mask],
            y=self.y[mask],
            risk_group=self.risk_group[mask],
            covariate_names=self.covariate_names,
            standardized=self.standardized,
        )

    @classmethod
    def from_arrays(cls, person, X, y, dates=None, risk_group=None,
                    person_ids=None, covariate_names=None) -> "PanelDataset":
        """Build a dataset from row arrays; rows are stably re-sorted by person.

        ``person`` holds integer labels. Occasion indices follow the given row
        order (or ``dates`` when supplied) within each person.
        """
        person = np.asarray(person, dtype=np.int64)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] != person.shape[0]:
            X = X.reshape(person.shape[0], -1)
        y = np.asarray(y, dtype=np.int8)
        n = person.shape[0]
        if dates is None:
            dates = np.datetime64("2000-01-01") + np.arange(n).astype("timedelta64[D]")
        dates = np.asarray(dates, dtype="datetime64[D]")
        risk_group = np.zeros(n, np.int64) if risk_group is None else np.asarray(risk_group, np.int64)
        uniq, first = np.unique(person, return_index=True)
        rank = np.empty(uniq.size, dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
        pidx = rank[np.searchsorted(uniq, person)]
        order = np.lexsort((np.arange(n), dates, pidx))
        pidx = pidx[order]
        if person_ids is None:
            labels = uniq[np.argsort(first, kind="stable")]
            person_ids = np.array([str(v) for v in labels])
        else:
            person_ids = np.asarray(person_ids, dtype=str)
        counts = np.bincount(pidx, minlength=uniq.size)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        occasion = np.arange(n) - starts[pidx] + 1
        if covariate_names is None:
            covariate_names = tuple(f"x{k + 1}" for k in range(X.shape[1]))
        return cls(
            person_ids=person_ids,
            person=pidx,
            occasion=occasion.astype(np.int64),
            dates=dates[order],
            X=X[order].copy(),
            y=y[order].copy(),
            risk_group=risk_group[order].copy(),
            covariate_names=tuple(covariate_names),
        )


def _parse_date(text: str) -> np.datetime64:
    return np.datetime64(dt.date.fromisoformat(text.strip()), "D")


def ingest_csv(path, schema: Schema | dict) -> PanelDataset:
    """Read a long-format CSV into a :class:`PanelDataset`.

    Rows with a missing or unparseable required field are dropped with a
    warning when ``schema.missing == "drop"`` and raise :class:`DataError`
    (carrying the line number) otherwise. A header lacking a mapped column is
    a :class:`ConfigError`.
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    if not schema.covariates:
        raise ConfigError("schema must name at least one covariate column")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file: no header row") from None
        col = {name.strip(): k for k, name in enumerate(header)}
        roles = [schema.person_id, schema.date, schema.outcome, *schema.covariates]
        if schema.risk_group:
            roles.append(schema.risk_group)
        absent = [r for r in roles if r not in col]
        if absent:
            raise ConfigError(f"{path}: columns not in header: {absent}")

        pid, dates, ys, xs, groups, lines = [], [], [], [], [], []
        dropped = 0
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rec = _parse_row(row, col, schema)
            except DataError as exc:
                if schema.missing == "abort":
                    raise DataError(str(exc), line=line_no) from None
                dropped += 1
                log.debug("dropping line %d: %s", line_no, exc)
                continue
            pid.append(rec[0])
            dates.append(rec[1])
            ys.append(rec[2])
            xs.append(rec[3])
            groups.append(rec[4])
            lines.append(line_no)
    if dropped:
        warnings.warn(f"{path}: dropped {dropped} row(s) with missing or invalid fields",
                      stacklevel=2)
    if not pid:
        raise DataError(f"{path}: no usable rows")

    ids, inverse = np.unique(np.array(pid), return_inverse=True)
    ds = PanelDataset.from_arrays(
        person=inverse,
        X=np.array(xs, dtype=np.float64),
        y=np.array(ys),
        dates=np.array(dates, dtype="datetime64[D]"),
        risk_group=np.array(groups),
        person_ids=None,
        covariate_names=schema.covariates,
    )
    # from_arrays orders persons by first appearance; restore their string ids
    first = np.unique(inverse, return_index=True)[1]
    ds = ds.replace(person_ids=ids[inverse[np.sort(first)]])
    ties = _count_same_date_ties(ds)
    if ties:
        warnings.warn(f"{path}: {ties} same-date occasion tie(s); file order kept", stacklevel=2)
    log.info("read %d rows (%d persons) from %s; %d dropped", ds.N, ds.m, path, dropped)
    return ds


def _parse_row(row, col, schema: Schema):
    def field(name):
        k = col[name]
        value = row[k].strip() if k < len(row) else ""
        if value.lower() in MISSING_TOKENS:
            raise DataError(f"missing value in column {name!r}")
        return value

    person = field(schema.person_id)
    try:
        date = _parse_date(field(schema.date))
    except ValueError:
        raise DataError(f"unparseable date in column {schema.date!r}") from None
    try:
        y = float(field(schema.outcome))
    except ValueError:
        raise DataError(f"non-numeric outcome in column {schema.outcome!r}") from None
    if y not in (0.0, 1.0):
        raise DataError(f"outcome must be 0 or 1, got {y}")
    try:
        x = [float(field(c)) for c in schema.covariates]
    except ValueError:
        raise DataError("non-numeric covariate") from None
    if not all(np.isfinite(x)):
        raise DataError("non-finite covariate")
    group = 0
    if schema.risk_group:
        k = col[schema.risk_group]
        raw = row[k].strip() if k < len(row) else ""
        if raw.lower() not in MISSING_TOKENS:
            try:
                group = int(float(raw))
            except ValueError:
                raise DataError("non-numeric risk group") from None
            if group < 1:
                raise DataError(f"risk group must be a positive integer, got {raw}")
    return person, date, int(y), x, group


def _count_same_date_ties(ds: PanelDataset) -> int:
    same_person = ds.person[1:] == ds.person[:-1]
    same_date = ds.dates[1:] == ds.dates[:-1]
    return int(np.sum(same_person & same_date))


def write_csv(ds: PanelDataset, path) -> None:
    """Canonical serialized form: the ingest schema plus ``occasion_index``."""
    names = list(ds.covariate_names)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["person_id", "date", "outcome", *names]
        if ds.has_risk_group:
            header.append("risk_group")
        header.append("occasion_index")
        w.writerow(header)
        for r in range(ds.N):
            row = [ds.person_ids[ds.person[r]], str(ds.dates[r]), int(ds.y[r])]
            row.extend(repr(float(v)) for v in ds.X[r])
            if ds.has_risk_group:
                row.append(int(ds.risk_group[r]) if ds.risk_group[r] > 0 else "")
            row.append(int(ds.occasion[r]))
            w.writerow(row)


def canonical_schema(ds: PanelDataset) -> Schema:
    return Schema(
        covariates=tuple(ds.covariate_names),
        risk_group="risk_group" if ds.has_risk_group else None,
    )


def standardize(ds: PanelDataset, params: StandardizationParams | None = None,
                allow_constant: bool = True):
    """Center and scale covariates with population (divide-by-N) moments.

    Without ``params`` the moments are estimated from ``ds`` (a training set).
    Constant columns are mapped to zeros with a warning, or rejected when
    ``allow_constant`` is false.

    Returns
    -------
    (PanelDataset, StandardizationParams)
    """
    X = ds.X
    if params is None:
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        constant = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
        if constant.any():
            names = [ds.covariate_names[k] for k in np.flatnonzero(constant)]
            if not allow_constant:
                raise DataError(f"zero-variance covariate(s): {names}")
            warnings.warn(f"constant covariate(s) mapped to zero: {names}", stacklevel=2)
        sd = np.where(constant, 1.0, sd)
        params = StandardizationParams(mean, sd, constant)
    elif params.mean.shape[0] != ds.p:
        raise DataError("standardization parameters do not match covariate count")
    Z = (X - params.mean) / params.sd
    Z[:, params.constant] = 0.0
    return ds.replace(X=Z, standardized=True), params


def split_train_holdout(ds: PanelDataset, cutoff_date):
    """Records dated strictly after ``cutoff_date`` form the holdout.

    Occasion indices are those of the full panel, so a person's holdout
    occasions continue their training sequence.
    """
    cutoff = np.datetime64(cutoff_date, "D")
    hold = ds.dates > cutoff
    if hold.all():
        raise DataError(f"no training records on or before {cutoff}")
    return ds.subset(~hold), ds.subset(hold)


def release_count_histogram(ds: PanelDataset) -> dict:
    """Map from observation count to the number of persons with that count."""
    return dict(sorted(collections.Counter(ds.n_i.tolist()).items()))
