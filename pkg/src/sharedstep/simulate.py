"""Seed-reproducible cohort simulation and event tables.

Random numbers come from Philox substreams keyed by ``(seed, purpose, block)``
where a block is a fixed run of ``BLOCK_SIZE`` consecutive subjects.  Subject
``i`` therefore receives the same variates however many workers are used and
however large the cohort is.
"""

from __future__ import annotations

import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd

from .laws import StepLaw
from .model import IndependentModel, SharedStepModel

__all__ = [
    "BLOCK_SIZE",
    "CohortSpec",
    "EventTable",
    "EventTableError",
    "sample_step_time",
    "simulate",
    "conditional_view",
    "disease_free_view",
    "onset_matrix",
    "read_event_table",
]

log = logging.getLogger(__name__)

BLOCK_SIZE = 1 << 16
CSV_HEADER = ("subject_id", "disease", "entry_age", "exit_age", "event")

_PURPOSE_FIRST = 0
_PURPOSE_SECOND = 1
_PURPOSE_PRIVATE_FIRST = 1 << 20


class EventTableError(ValueError):
    pass


@dataclass(frozen=True)
class CohortSpec:
    n_subjects: int
    follow_up: float
    seed: int
    model: Union[SharedStepModel, IndependentModel]

    def __post_init__(self):
        if isinstance(self.n_subjects, bool) or int(self.n_subjects) != self.n_subjects:
            raise ValueError("n_subjects must be an integer")
        if self.n_subjects <= 0:
            raise ValueError(f"n_subjects must be > 0, got {self.n_subjects}")
        if not self.follow_up >= 0:
            raise ValueError(f"follow_up must be >= 0, got {self.follow_up}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not isinstance(self.model, (SharedStepModel, IndependentModel)):
            raise TypeError("model must be a SharedStepModel or IndependentModel")
        if not self.model.names:
            raise ValueError("cannot simulate a model without diseases")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventTable:
    """Column-oriented, immutable table of per-subject, per-disease records.

    ``disease`` holds integer codes into ``names``.
    """

    names: tuple[str, ...]
    subject_id: np.ndarray
    disease: np.ndarray
    entry: np.ndarray
    exit: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        for field, dtype in (
            ("subject_id", np.int64),
            ("disease", np.int32),
            ("entry", np.float64),
            ("exit", np.float64),
            ("event", np.bool_),
        ):
            object.__setattr__(self, field, _frozen(getattr(self, field), dtype))
        n = len(self.subject_id)
        if any(len(getattr(self, f)) != n for f in ("disease", "entry", "exit", "event")):
            raise EventTableError("columns have different lengths")
        if n and (self.disease.min() < 0 or self.disease.max() >= len(self.names)):
            raise EventTableError("disease code out of range")
        if np.any(self.entry < 0) or np.any(self.exit < self.entry):
            raise EventTableError("records need 0 <= entry_age <= exit_age")

    def __len__(self) -> int:
        return len(self.subject_id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventTable):
            return NotImplemented
        return self.names == other.names and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("subject_id", "disease", "entry", "exit", "event")
        )

    def code(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise EventTableError(f"unknown disease {name!r}; table has {list(self.names)}") from None

    def select(self, name: str) -> "EventTable":
        """Records for one disease only."""
        mask = self.disease == self.code(name)
        return self.take(mask)

    def take(self, mask) -> "EventTable":
        return EventTable(
            self.names,
            self.subject_id[mask],
            self.disease[mask],
            self.entry[mask],
            self.exit[mask],
            self.event[mask],
        )

    @property
    def n_subjects(self) -> int:
        return int(np.unique(self.subject_id).size)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "subject_id": self.subject_id,
                "disease": np.asarray(self.names, dtype=object)[self.disease]
                if len(self)
                else np.array([], dtype=object),
                "entry_age": self.entry,
                "exit_age": self.exit,
                "event": self.event.astype(np.int8),
            }
        )

    def to_csv(self, path=None) -> str | None:
        """Write ``subject_id,disease,entry_age,exit_age,event``; returns text if no path."""
        frame = self.to_frame()
        kwargs = dict(index=False, float_format="%.17g", lineterminator="\n")
        if path is None:
            return frame.to_csv(**kwargs)
        frame.to_csv(Path(path), **kwargs)
        return None


def read_event_table(source, names: Sequence[str] | None = None) -> EventTable:
    """Read an event-table CSV from a path or file-like object.

    Disease codes follow ``names`` when given, otherwise order of first
    appearance.
    """
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    try:
        frame = pd.read_csv(
            source,
            dtype={"subject_id": np.int64, "disease": str, "entry_age": np.float64,
                   "exit_age": np.float64, "event": np.int64},
            keep_default_na=False,
            float_precision="round_trip",
        )
    except (ValueError, pd.errors.ParserError) as exc:
        raise EventTableError(f"cannot parse event table: {exc}") from None
    if tuple(frame.columns) != CSV_HEADER:
        raise EventTableError(f"expected header {','.join(CSV_HEADER)}, got {','.join(frame.columns)}")
    if not frame["event"].isin([0, 1]).all():
        raise EventTableError("event column must be 0 or 1")
    labels = frame["disease"].to_numpy()
    if names is None:
        names = tuple(pd.unique(labels))
    names = tuple(names)
    index = {n: i for i, n in enumerate(names)}
    try:
        codes = np.fromiter((index[l] for l in labels), dtype=np.int32, count=len(labels))
    except KeyError as exc:
        raise EventTableError(f"disease {exc.args[0]!r} not in {list(names)}") from None
    return EventTable(
        names,
        frame["subject_id"].to_numpy(),
        codes,
        frame["entry_age"].to_numpy(),
        frame["exit_age"].to_numpy(),
        frame["event"].to_numpy().astype(bool),
    )


# ------------------------------------------------------------------ sampling


def sample_step_time(law: StepLaw, u):
    """Inverse-cdf draw of a step's waiting time from uniform variate(s) ``u``."""
    return law.inverse_cdf(u)


def _uniforms(seed: int, purpose: int, block: int, size: int) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=(purpose, block))
    return np.random.Generator(np.random.Philox(ss)).random(size)


def _block_onsets(spec: CohortSpec, block: int, size: int) -> np.ndarray:
    model = spec.model
    if isinstance(model, SharedStepModel):
        t0 = model.first.inverse_cdf(_uniforms(spec.seed, _PURPOSE_FIRST, block, size))
        cols = [
            t0 + law.inverse_cdf(_uniforms(spec.seed, _PURPOSE_SECOND + j, block, size))
            for j, (_, law) in enumerate(model.diseases)
        ]
    else:
        cols = [
            first.inverse_cdf(_uniforms(spec.seed, _PURPOSE_PRIVATE_FIRST + j, block, size))
            + second.inverse_cdf(_uniforms(spec.seed, _PURPOSE_SECOND + j, block, size))
            for j, (_, first, second) in enumerate(model.diseases)
        ]
    return np.column_stack(cols)


def simulate_onsets(spec: CohortSpec, workers: int = 1) -> np.ndarray:
    """Uncensored onset ages, shape ``(n_subjects, m)``."""
    n = int(spec.n_subjects)
    blocks = [(b, min(BLOCK_SIZE, n - b * BLOCK_SIZE)) for b in range(-(-n // BLOCK_SIZE))]
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda bs: _block_onsets(spec, *bs), blocks))
    else:
        parts = [_block_onsets(spec, *bs) for bs in blocks]
    return np.vstack(parts)


def simulate(spec: CohortSpec, workers: int = 1) -> EventTable:
    """Simulate the cohort; one record per (subject, disease), entry age 0."""
    onsets = simulate_onsets(spec, workers)
    n, m = onsets.shape
    follow = float(spec.follow_up)
    event = onsets <= follow
    exit_ = np.where(event, onsets, follow)
    return EventTable(
        spec.model.names,
        np.repeat(np.arange(n, dtype=np.int64), m),
        np.tile(np.arange(m, dtype=np.int32), n),
        np.zeros(n * m),
        exit_.ravel(),
        event.ravel(),
    )


def onset_matrix(table: EventTable) -> tuple[np.ndarray, np.ndarray]:
    """Observed onset ages as an ``(n_subjects, m)`` array, ``inf`` if censored.

    Also returns the sorted subject ids.  The table must hold exactly one
    record per (subject, disease).
    """
    subjects, rows = np.unique(table.subject_id, return_inverse=True)
    m = len(table.names)
    if len(table) != subjects.size * m:
        raise EventTableError("onset_matrix needs one record per (subject, disease)")
    out = np.full((subjects.size, m), np.nan)
    out[rows, table.disease] = np.where(table.event, table.exit, np.inf)
    if np.isnan(out).any():
        raise EventTableError("onset_matrix needs one record per (subject, disease)")
    return out, subjects


def _per_subject(table: EventTable, name: str):
    sub = table.select(name)
    order = np.argsort(sub.subject_id, kind="stable")
    ids = sub.subject_id[order]
    if np.any(ids[1:] == ids[:-1]):
        raise EventTableError(f"more than one record for a subject and {name!r}")
    return ids, sub.entry[order], sub.exit[order], sub.event[order]


def _lookup(ids_from, values, ids_to, default):
    pos = np.searchsorted(ids_from, ids_to)
    pos_c = np.minimum(pos, max(len(ids_from) - 1, 0))
    hit = (pos < len(ids_from)) & (ids_from[pos_c] == ids_to) if len(ids_from) else np.zeros(len(ids_to), bool)
    out = np.full(len(ids_to), default, dtype=float)
    out[hit] = values[pos_c[hit]]
    return out


def _earliest_other_onset(table, target, exclude, ids):
    first = np.full(len(ids), np.inf)
    for name in table.names:
        if name in exclude:
            continue
        o_ids, _, o_exit, o_event = _per_subject(table, name)
        onset = np.where(o_event, o_exit, np.inf)
        first = np.minimum(first, _lookup(o_ids, onset, ids, np.inf))
    return first


def conditional_view(
    table: EventTable, target: str, given: str, censor_at_others: bool = False
) -> EventTable:
    """Target-disease records for subjects observed to have ``given``.

    Each record enters at the ``given`` onset age.  Subjects whose ``target``
    onset precedes ``given`` are dropped; exact ties go to whichever disease is
    listed first.  With ``censor_at_others`` the record is also censored at the
    first onset of any third disease after entry.
    """
    if target == given:
        raise EventTableError("target and given must differ")
    t_code, g_code = table.code(target), table.code(given)
    g_ids, _, g_exit, g_event = _per_subject(table, given)
    g_ids, g_age = g_ids[g_event], g_exit[g_event]
    ids, _, exit_, event = _per_subject(table, target)
    keep = np.isin(ids, g_ids)
    ids, exit_, event = ids[keep], exit_[keep], event[keep]
    entry = _lookup(g_ids, g_age, ids, np.nan)
    target_first = event & ((exit_ < entry) | ((exit_ == entry) & (t_code < g_code)))
    ok = ~target_first
    ids, entry, exit_, event = ids[ok], entry[ok], exit_[ok], event[ok]
    if censor_at_others:
        other = _earliest_other_onset(table, target, {target, given}, ids)
        cut = (other > entry) & (other < exit_)
        exit_ = np.where(cut, other, exit_)
        event = event & ~cut
    return EventTable(
        table.names, ids, np.full(len(ids), t_code, np.int32), entry, exit_, event
    )


def disease_free_view(
    table: EventTable, target: str, censor_on: Sequence[str] | None = None
) -> EventTable:
    """Target records for individuals free of the ``censor_on`` diseases.

    Follow-up of ``target`` stops at the first onset of any disease in
    ``censor_on`` (default: every other disease), as for incidence in
    previously disease-free individuals.
    """
    t_code = table.code(target)
    if censor_on is None:
        censor_on = [n for n in table.names if n != target]
    exclude = set(table.names) - set(censor_on) | {target}
    ids, entry, exit_, event = _per_subject(table, target)
    other = _earliest_other_onset(table, target, exclude, ids)
    onset = np.where(event, exit_, np.inf)
    # tie: the disease listed first counts as having occurred first
    cut = other < np.minimum(exit_, onset)
    ties = event & (other == onset)
    if ties.any():
        for name in censor_on:
            if table.code(name) < t_code:
                o_ids, _, o_exit, o_event = _per_subject(table, name)
                o_on = _lookup(o_ids, np.where(o_event, o_exit, np.inf), ids, np.inf)
                cut |= ties & (o_on == onset)
    cut &= other >= entry
    exit_ = np.where(cut, np.maximum(other, entry), exit_)
    event = event & ~cut
    return EventTable(table.names, ids, np.full(len(ids), t_code, np.int32), entry, exit_, event)
