"""Discrete-time event-history data model.

Days are indexed ``j = 0, ..., J`` where day ``j`` stands for the interval
``(t_{j-1}, t_j]``.  A patient leaves the HAI-free state at
``T~ = min(T, C)`` through one of three competing events: HAI-free death
(1), HAI-free discharge (2) or infection onset (3).  Within a day, infection
onset is ordered before death or discharge.

Internally a cohort is stored column-wise (:class:`Cohort`); a patient who is
still hospitalized and uninfected after the horizon has ``t_tilde = J + 1``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import MissingTerminalEventsError, ValidationError

PATIENT_COLUMNS = ("patient_id", "infection_day", "terminal_day", "terminal_type")
BEYOND_COLUMN = "at_risk_beyond_horizon"


class Event(enum.IntEnum):
    AT_RISK = 0
    DEATH = 1
    DISCHARGE = 2
    INFECTION = 3


TERMINAL_NAMES = {"death": Event.DEATH, "discharge": Event.DISCHARGE}


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Day grid ``0..horizon``."""

    horizon: int

    def __post_init__(self):
        if isinstance(self.horizon, bool) or int(self.horizon) != self.horizon:
            raise ValidationError(f"horizon must be an integer, got {self.horizon!r}")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_days(self) -> int:
        return self.horizon + 1

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.horizon + 1)

    @property
    def beyond(self) -> int:
        """Sentinel day used for 'still at risk after the horizon'."""
        return self.horizon + 1


@dataclass(frozen=True)
class PatientRecord:
    """One patient's raw record.

    ``infection_day`` is HAI onset ``C``; ``terminal_day``/``terminal_type``
    give hospital death or discharge ``(T, eps)``.  An infected patient may
    have no recorded post-infection follow-up, in which case both terminal
    fields and ``at_risk_beyond_horizon`` are empty.
    """

    patient_id: str
    infection_day: int | None = None
    terminal_day: int | None = None
    terminal_type: Event | None = None
    at_risk_beyond_horizon: bool = False
    infected_unknown_day: bool = False

    def __post_init__(self):
        pid = self.patient_id
        if self.infected_unknown_day and self.infection_day is not None:
            raise ValidationError(f"patient {pid}: infected_unknown_day conflicts with infection_day",
                                  patient_id=pid)
        for name in ("infection_day", "terminal_day"):
            v = getattr(self, name)
            if v is not None and (isinstance(v, bool) or int(v) != v or v < 0):
                raise ValidationError(f"patient {pid}: {name} must be a nonnegative integer, got {v!r}",
                                      patient_id=pid)
        if self.terminal_type is not None:
            object.__setattr__(self, "terminal_type", Event(self.terminal_type))
            if self.terminal_type not in (Event.DEATH, Event.DISCHARGE):
                raise ValidationError(f"patient {pid}: terminal_type must be death or discharge",
                                      patient_id=pid)
        if (self.terminal_day is None) != (self.terminal_type is None):
            raise ValidationError(
                f"patient {pid}: terminal_day and terminal_type must be given together", patient_id=pid)
        if self.terminal_day is not None and self.at_risk_beyond_horizon:
            raise ValidationError(
                f"patient {pid}: terminal event and at_risk_beyond_horizon are mutually exclusive",
                patient_id=pid)
        if (self.infection_day is None and not self.infected_unknown_day
                and self.terminal_day is None and not self.at_risk_beyond_horizon):
            raise ValidationError(
                f"patient {pid}: uninfected patient needs a terminal event or at_risk_beyond_horizon",
                patient_id=pid)
        if (self.infection_day is not None and self.terminal_day is not None
                and self.infection_day > self.terminal_day):
            raise ValidationError(
                f"patient {pid}: infection_day {self.infection_day} after terminal_day {self.terminal_day}",
                patient_id=pid)


@dataclass(frozen=True)
class ObservedThreeState:
    """``(T~, eps~)`` for one patient; ``t_tilde`` is None beyond the horizon."""

    patient_id: str
    t_tilde: int | None
    eps_tilde: Event


def derive_observed(record: PatientRecord, grid: TimeGrid) -> ObservedThreeState:
    """Reduce a raw record to the three-event competing-risk observation.

    Infection on the same day as death or discharge counts as infection.
    Days after the horizon are treated as not yet happened.  A patient known
    to be infected at an unrecorded day is placed at ``min(T, J)``, which
    only the exclusion estimator can use.
    """
    J = grid.horizon
    C, T = record.infection_day, record.terminal_day
    if record.terminal_type is not None and T is None:
        raise ValidationError(f"patient {record.patient_id}: terminal_type without terminal_day",
                              patient_id=record.patient_id)
    if record.infected_unknown_day:
        return ObservedThreeState(record.patient_id, J if T is None else min(T, J), Event.INFECTION)
    if C is not None and C <= J and (T is None or C <= T):
        return ObservedThreeState(record.patient_id, C, Event.INFECTION)
    if T is not None and T <= J:
        return ObservedThreeState(record.patient_id, T, Event(record.terminal_type))
    return ObservedThreeState(record.patient_id, None, Event.AT_RISK)


@dataclass(frozen=True)
class LifeTable:
    """Event counts ``events[j, k-1]`` and risk sets ``at_risk[j]``.

    The three-event table has columns (death, discharge, infection); the
    two-state table built from ``(T, eps)`` has (death, discharge).
    """

    grid: TimeGrid
    events: np.ndarray
    at_risk: np.ndarray
    n: int

    def __post_init__(self):
        ev = np.asarray(self.events, dtype=np.int64)
        r = np.asarray(self.at_risk, dtype=np.int64)
        if ev.ndim != 2 or ev.shape[0] != self.grid.n_days or r.shape != (self.grid.n_days,):
            raise ValidationError("life table shape does not match the grid")
        if (ev < 0).any() or (r < 0).any():
            raise ValidationError("life table counts must be nonnegative")
        if r[0] != self.n:
            raise ValidationError("risk set on day 0 must equal the cohort size")
        tot = ev.sum(axis=1)
        if not np.array_equal(r[1:], r[:-1] - tot[:-1]) or tot[-1] > r[-1]:
            raise ValidationError("risk sets violate r[j+1] = r[j] - d[j]")
        object.__setattr__(self, "events", _readonly(ev))
        object.__setattr__(self, "at_risk", _readonly(r))
        object.__setattr__(self, "n", int(self.n))

    def d(self, k: int) -> np.ndarray:
        """Counts of event type ``k`` (1-based) per day."""
        return self.events[:, k - 1]

    @property
    def total(self) -> np.ndarray:
        return self.events.sum(axis=1)

    @property
    def n_event_types(self) -> int:
        return self.events.shape[1]

    @property
    def beyond_horizon(self) -> int:
        """Patients still at risk after day J."""
        return int(self.at_risk[-1] - self.total[-1])

    @classmethod
    def from_counts(cls, grid: TimeGrid, events, n: int) -> "LifeTable":
        ev = np.asarray(events, dtype=np.int64)
        cum = np.concatenate([[0], np.cumsum(ev.sum(axis=1))[:-1]])
        return cls(grid, ev, n - cum, n)


@dataclass(frozen=True)
class Cohort:
    """Column-wise cohort on a fixed grid.

    Attributes
    ----------
    t_tilde, eps_tilde
        ``min(T, C)`` and the three-event type; ``t_tilde == J + 1`` with
        ``eps_tilde == 0`` marks an uninfected patient at risk past day J.
    t_factual, eps_factual
        Terminal day/type ``(T, eps)`` ignoring infection.  ``J + 1`` / 0
        means still hospitalized after J; -1 / -1 means unknown (an infected
        patient without post-infection follow-up).
    """

    grid: TimeGrid
    patient_ids: tuple
    t_tilde: np.ndarray
    eps_tilde: np.ndarray
    t_factual: np.ndarray
    eps_factual: np.ndarray
    onset_known: bool = True

    def __post_init__(self):
        n = len(self.patient_ids)
        object.__setattr__(self, "patient_ids", tuple(self.patient_ids))
        for name in ("t_tilde", "eps_tilde", "t_factual", "eps_factual"):
            a = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            if a.shape != (n,):
                raise ValidationError(f"{name} has length {a.shape[0]}, expected {n}")
            object.__setattr__(self, name, _readonly(a))

    @property
    def n(self) -> int:
        return len(self.patient_ids)

    @property
    def infected(self) -> np.ndarray:
        return self.eps_tilde == Event.INFECTION

    @property
    def infection_day(self) -> np.ndarray:
        """Onset day for patients infected within the horizon, else -1."""
        return np.where(self.infected, self.t_tilde, -1)

    @property
    def has_full_followup(self) -> bool:
        return bool((self.t_factual >= 0).all())

    @classmethod
    def from_records(cls, records: Iterable[PatientRecord], grid: TimeGrid) -> "Cohort":
        records = list(records)
        J = grid.horizon
        ids, tt, et, tf, ef = [], [], [], [], []
        for rec in records:
            obs = derive_observed(rec, grid)
            ids.append(rec.patient_id)
            tt.append(grid.beyond if obs.t_tilde is None else obs.t_tilde)
            et.append(int(obs.eps_tilde))
            if rec.terminal_day is not None:
                ok = rec.terminal_day <= J
                tf.append(rec.terminal_day if ok else grid.beyond)
                ef.append(int(rec.terminal_type) if ok else 0)
            elif rec.at_risk_beyond_horizon or (rec.infection_day is not None and rec.infection_day > J):
                tf.append(grid.beyond)
                ef.append(0)
            else:
                tf.append(-1)
                ef.append(-1)
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate patient_id in cohort")
        onset_known = not any(r.infected_unknown_day for r in records)
        return cls(grid, tuple(ids), tt, et, tf, ef, onset_known)

    @classmethod
    def from_observed(cls, observed: Sequence[ObservedThreeState], grid: TimeGrid) -> "Cohort":
        """Cohort known only through ``(T~, eps~)``; factual follow-up unknown."""
        tt = [grid.beyond if o.t_tilde is None else o.t_tilde for o in observed]
        et = [int(o.eps_tilde) for o in observed]
        tt_a = np.asarray(tt, dtype=np.int64)
        et_a = np.asarray(et, dtype=np.int64)
        tf = np.where(et_a == Event.INFECTION, -1, tt_a)
        ef = np.where(et_a == Event.INFECTION, -1, et_a)
        return cls(grid, tuple(o.patient_id for o in observed), tt_a, et_a, tf, ef)

    def observed(self) -> list[ObservedThreeState]:
        J = self.grid.horizon
        return [ObservedThreeState(pid, None if t > J else int(t), Event(int(e)))
                for pid, t, e in zip(self.patient_ids, self.t_tilde, self.eps_tilde)]

    def records(self) -> list[PatientRecord]:
        J = self.grid.horizon
        out = []
        for i, pid in enumerate(self.patient_ids):
            infected = self.eps_tilde[i] == Event.INFECTION
            unknown = infected and not self.onset_known
            C = int(self.t_tilde[i]) if infected and not unknown else None
            tf, ef = int(self.t_factual[i]), int(self.eps_factual[i])
            if 0 <= tf <= J:
                out.append(PatientRecord(pid, C, tf, Event(ef), infected_unknown_day=unknown))
            elif tf > J:
                out.append(PatientRecord(pid, C, None, None, True, unknown))
            else:
                out.append(PatientRecord(pid, C, infected_unknown_day=unknown))
        return out

    def take(self, idx) -> "Cohort":
        """Sub-cohort (rows may repeat; repeated ids get a ``#k`` suffix)."""
        idx = np.asarray(idx, dtype=np.int64)
        seen: dict[str, int] = {}
        ids = []
        for i in idx:
            pid = self.patient_ids[i]
            k = seen.get(pid, 0)
            seen[pid] = k + 1
            ids.append(pid if k == 0 else f"{pid}#{k}")
        return Cohort(self.grid, tuple(ids), self.t_tilde[idx], self.eps_tilde[idx],
                      self.t_factual[idx], self.eps_factual[idx], self.onset_known)


def build_life_table(cohort, grid: TimeGrid | None = None) -> LifeTable:
    """Three-event life table: ``d~_{jk}`` for k in (1, 2, 3) and ``r~_j``.

    ``cohort`` is a :class:`Cohort` or a sequence of
    :class:`ObservedThreeState` (then ``grid`` is required).
    """
    if not isinstance(cohort, Cohort):
        if grid is None:
            raise ValidationError("grid is required when building from observations")
        cohort = Cohort.from_observed(list(cohort), grid)
    elif grid is not None and grid != cohort.grid:
        raise ValidationError("cohort grid differs from requested grid")
    return _table(cohort.grid, cohort.t_tilde, cohort.eps_tilde, 3)


def build_two_state_table(cohort: Cohort) -> LifeTable:
    """Life table of ``(T, eps)`` ignoring infection, for the factual CIF."""
    if not cohort.has_full_followup:
        missing = [cohort.patient_ids[i] for i in np.flatnonzero(cohort.t_factual < 0)]
        raise MissingTerminalEventsError(
            f"{len(missing)} infected patient(s) lack a recorded terminal event (e.g. {missing[0]})",
            patient_ids=missing)
    return _table(cohort.grid, cohort.t_factual, cohort.eps_factual, 2)


def _table(grid, t, eps, n_types):
    n = len(t)
    events = np.zeros((grid.n_days, n_types), dtype=np.int64)
    inside = t <= grid.horizon
    for k in range(1, n_types + 1):
        sel = inside & (eps == k)
        events[:, k - 1] = np.bincount(t[sel], minlength=grid.n_days)[: grid.n_days]
    return LifeTable.from_counts(grid, events, n)


# --------------------------------------------------------------------------
# CSV input


def _parse_day(text, line, column):
    text = text.strip()
    if text == "":
        return None
    try:
        v = int(text)
    except ValueError:
        raise ValidationError(f"line {line}: {column} must be an integer day, got {text!r}",
                              line=line) from None
    if v < 0:
        raise ValidationError(f"line {line}: {column} must be nonnegative, got {v}", line=line)
    return v


def _parse_bool(text, line, column):
    t = text.strip().lower()
    if t in ("", "0", "false", "no"):
        return False
    if t in ("1", "true", "yes"):
        return True
    raise ValidationError(f"line {line}: {column} must be 0/1 or true/false, got {text!r}",
                          line=line)


def ingest_patients_csv(path, grid: TimeGrid | None = None) -> list[PatientRecord]:
    """Read ``patients.csv``.

    Required header: ``patient_id,infection_day,terminal_day,terminal_type``
    (``infection_day`` may be omitted entirely, see below).  Empty fields mean
    absent.  An optional ``at_risk_beyond_horizon`` column (0/1) marks
    patients, infected or not, still hospitalized after the last recorded
    day; without it, a row with neither infection nor terminal event is taken
    to be at risk beyond the horizon.

    A file without an ``infection_day`` column is accepted because the
    exclusion estimator needs only infection status: an optional ``infected``
    column (0/1) then flags patients infected at an unrecorded day.  With
    neither column every patient is read as never infected.

    ``grid`` is accepted for symmetry with the other readers; records are
    stored as given and clipped to the horizon only when a cohort is built.
    """
    path = Path(path)
    records: list[PatientRecord] = []
    seen: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        missing = [c for c in PATIENT_COLUMNS if c not in header and c != "infection_day"]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in header}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"line {line}: expected {len(header)} fields, got {len(row)}",
                                      line=line)
            pid = row[col["patient_id"]].strip()
            if not pid:
                raise ValidationError(f"line {line}: empty patient_id", line=line)
            if pid in seen:
                raise ValidationError(f"line {line}: duplicate patient_id {pid!r} (first on line {seen[pid]})",
                                      line=line)
            seen[pid] = line
            C = _parse_day(row[col["infection_day"]], line, "infection_day") if "infection_day" in col else None
            unknown_day = ("infection_day" not in col and "infected" in col
                           and _parse_bool(row[col["infected"]], line, "infected"))
            T = _parse_day(row[col["terminal_day"]], line, "terminal_day")
            kind = row[col["terminal_type"]].strip().lower()
            if kind and kind not in TERMINAL_NAMES:
                raise ValidationError(f"line {line}: terminal_type must be death or discharge, got {kind!r}",
                                      line=line)
            if kind and T is None:
                raise ValidationError(f"line {line}: terminal_type given but terminal_day empty", line=line)
            if T is not None and not kind:
                raise ValidationError(f"line {line}: terminal_day given but terminal_type empty", line=line)
            if BEYOND_COLUMN in col:
                beyond = _parse_bool(row[col[BEYOND_COLUMN]], line, BEYOND_COLUMN)
            else:
                beyond = C is None and T is None and not unknown_day
            try:
                records.append(PatientRecord(pid, C, T, TERMINAL_NAMES.get(kind), beyond, unknown_day))
            except ValidationError as exc:
                raise ValidationError(f"line {line}: {exc.args[0]}", line=line) from None
    return records


def load_cohort(path, grid: TimeGrid) -> Cohort:
    return Cohort.from_records(ingest_patients_csv(path, grid), grid)


@dataclass(frozen=True)
class CovariateHistory:
    """Covariate values ``values[i, j, k]`` for patient i (cohort order), day j.

    Missing cells are NaN.  The hazard of infection on day ``j`` uses the
    values recorded on day ``j - 1``; day 0 uses the day-0 (baseline) values.
    """

    names: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[2] != len(self.names):
            raise ValidationError("covariate array must have shape (n, J+1, K)")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", _readonly(v))

    @property
    def k(self) -> int:
        return len(self.names)

    @classmethod
    def empty(cls, cohort: Cohort) -> "CovariateHistory":
        return cls((), np.zeros((cohort.n, cohort.grid.n_days, 0)))

    def take(self, idx) -> "CovariateHistory":
        return CovariateHistory(self.names, self.values[np.asarray(idx, dtype=np.int64)])

    def select(self, names: Sequence[str]) -> "CovariateHistory":
        unknown = [c for c in names if c not in self.names]
        if unknown:
            raise ValidationError(f"unknown covariate(s): {', '.join(unknown)}")
        pos = [self.names.index(c) for c in names]
        return CovariateHistory(tuple(names), self.values[:, :, pos])

    def lagged(self) -> np.ndarray:
        """Values conditioning the day-j hazard: row j holds day ``max(j-1, 0)``."""
        v = self.values
        return np.concatenate([v[:, :1], v[:, :-1]], axis=1)

    def validate(self, cohort: Cohort) -> None:
        """Every value needed for a hazard on an at-risk day must be present."""
        if self.values.shape[:2] != (cohort.n, cohort.grid.n_days):
            raise ValidationError("covariate history does not match the cohort")
        if self.k == 0:
            return
        lag = self.lagged()
        J = cohort.grid.horizon
        last = np.minimum(cohort.t_tilde, J)
        need = np.arange(cohort.grid.n_days)[None, :] <= last[:, None]
        bad = need & np.isnan(lag).any(axis=2)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            day = max(j - 1, 0)
            raise ValidationError(
                f"patient {cohort.patient_ids[i]}: missing covariate values on day {day}",
                patient_id=cohort.patient_ids[i], day=int(day))


def ingest_covariates_csv(path, cohort: Cohort) -> CovariateHistory:
    """Read long-format ``covariates.csv``: ``patient_id,day,<cov1>,...``.

    Rows for days after the horizon are ignored.
    """
    path = Path(path)
    index = {pid: i for i, pid in enumerate(cohort.patient_ids)}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if header[:2] != ["patient_id", "day"]:
            raise ValidationError(f"{path}: header must start with patient_id,day")
        names = tuple(header[2:])
        if len(set(names)) != len(names):
            raise ValidationError(f"{path}: duplicate covariate names")
        values = np.full((cohort.n, cohort.grid.n_days, len(names)), np.nan)
        seen = set()
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"line {line}: expected {len(header)} fields, got {len(row)}",
                                      line=line)
            pid = row[0].strip()
            if pid not in index:
                raise ValidationError(f"line {line}: unknown patient_id {pid!r}", line=line)
            day = _parse_day(row[1], line, "day")
            if day is None:
                raise ValidationError(f"line {line}: empty day", line=line)
            if (pid, day) in seen:
                raise ValidationError(f"line {line}: duplicate row for ({pid}, day {day})", line=line)
            seen.add((pid, day))
            if day > cohort.grid.horizon:
                continue
            try:
                vals = [float(c) for c in row[2:]]
            except ValueError:
                raise ValidationError(f"line {line}: covariate values must be decimal numbers",
                                      line=line) from None
            if any(not math.isfinite(v) for v in vals):
                raise ValidationError(f"line {line}: covariate values must be finite", line=line)
            values[index[pid], day] = vals
    hist = CovariateHistory(names, values)
    hist.validate(cohort)
    return hist
