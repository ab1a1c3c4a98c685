"""Simulation campaigns: resumable parameter sweeps with an append-only
record store, plus correlation matrices and ML dataset assembly.

Store layout (one directory per campaign):

    records.csv   header: 11 parameter names, cd, cl, ct_seconds, valid,
                  seed, id — floats as shortest round-trip decimals
    meta.json     space definition, case variant, master seed, code version
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

import gfdmlab
from gfdmlab import errors
from gfdmlab.cases import build_case
from gfdmlab.model_eval import Dataset
from gfdmlab.sampling import ParameterSpace, encode
from gfdmlab.solver import PARAM_NAMES, SimulationRecord, SolverConfig, run_simulation

TARGETS = ("cd", "cl", "ct")
_FIELDNAMES = list(PARAM_NAMES) + ["cd", "cl", "ct_seconds", "valid", "seed", "id"]


def _fmt(v) -> str:
    if isinstance(v, bool) or isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunStore:
    """File-backed append-only record log, keyed by monotone integer ids."""

    root: str

    @property
    def records_path(self) -> str:
        return os.path.join(self.root, "records.csv")

    @property
    def meta_path(self) -> str:
        return os.path.join(self.root, "meta.json")

    def ensure(self, meta: dict | None = None) -> None:
        os.makedirs(self.root, exist_ok=True)
        if not os.path.exists(self.records_path):
            with open(self.records_path, "w", newline="") as f:
                csv.writer(f).writerow(_FIELDNAMES)
        if meta is not None and not os.path.exists(self.meta_path):
            with open(self.meta_path, "w") as f:
                json.dump(meta, f, indent=2)

    def meta(self) -> dict:
        if not os.path.exists(self.meta_path):
            return {}
        with open(self.meta_path) as f:
            return json.load(f)

    def append(self, record: SimulationRecord) -> None:
        row = [
            _fmt(record.params[name]) for name in PARAM_NAMES
        ] + [
            repr(float(record.cd)),
            repr(float(record.cl)),
            repr(float(record.ct_seconds)),
            "1" if record.valid else "0",
            str(int(record.seed)),
            str(int(record.record_id)),
        ]
        with open(self.records_path, "a", newline="") as f:
            csv.writer(f).writerow(row)

    def rows(self) -> list[dict]:
        """All records as dicts, ordered by id."""
        if not os.path.exists(self.records_path):
            return []
        out = []
        with open(self.records_path) as f:
            for row in csv.DictReader(f):
                rec = {name: float(row[name]) for name in PARAM_NAMES}
                rec["cd"] = float(row["cd"])
                rec["cl"] = float(row["cl"])
                rec["ct"] = float(row["ct_seconds"])
                rec["valid"] = row["valid"] == "1"
                rec["seed"] = int(row["seed"])
                rec["id"] = int(row["id"])
                out.append(rec)
        out.sort(key=lambda r: r["id"])
        return out

    def present_ids(self) -> set[int]:
        return {r["id"] for r in self.rows()}


def _simulate_one(args):
    record_id, params, variant, seed, overrides = args
    # one simulation per worker process, single-threaded (stable ct labels)
    case = build_case(variant, overrides)
    config = SolverConfig.from_params(params)
    record, _series = run_simulation(case, config, seed)
    record.record_id = record_id
    return record


def run_campaign(
    samples: list[dict],
    variant: str,
    store: RunStore,
    seed: int = 42,
    workers: int = 1,
    space: ParameterSpace | None = None,
    case_overrides: dict | None = None,
    progress=None,
) -> RunStore:
    """Simulate every sample exactly once (already-present ids are skipped,
    making interrupted campaigns resumable). Per-record failures are stored
    as invalid records; records are appended in id order."""
    space = space or ParameterSpace.default()
    store.ensure(
        meta={
            "space": space.to_dict(),
            "case": variant,
            "seed": seed,
            "version": gfdmlab.__version__,
            "case_overrides": case_overrides or {},
        }
    )
    done = store.present_ids()
    jobs = [
        (i, s, variant, seed * 1_000_003 + i, case_overrides or {})
        for i, s in enumerate(samples)
        if i not in done
    ]
    if not jobs:
        return store

    if workers <= 1:
        for job in jobs:
            rec = _simulate_one(job)
            store.append(rec)
            if progress:
                progress(rec)
        return store

    # imap keeps completion results in submission (id) order, preserving the
    # append-only id-sorted layout
    ctx = get_context("fork")
    with ctx.Pool(processes=workers, initializer=_worker_init) as pool:
        for rec in pool.imap(_simulate_one, jobs):
            store.append(rec)
            if progress:
                progress(rec)
    return store


def _worker_init():
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")


def correlations(store: RunStore, min_records: int = 3):
    """Pearson matrix over {parameters} + {cd, cl, ct} from valid records.

    Returns (names, matrix, dropped) where dropped lists zero-variance
    columns excluded from the matrix.
    """
    rows = [r for r in store.rows() if r["valid"]]
    if len(rows) < min_records:
        raise errors.TooFewRecords(f"{len(rows)} valid records < {min_records}")
    names = list(PARAM_NAMES) + ["cd", "cl", "ct"]
    data = np.array([[r[name] for name in names] for r in rows], dtype=float)
    keep = data.std(axis=0) > 0.0
    dropped = [n for n, k in zip(names, keep) if not k]
    kept_names = [n for n, k in zip(names, keep) if k]
    mat = np.corrcoef(data[:, keep], rowvar=False)
    return kept_names, mat, dropped


def build_dataset(store: RunStore, target: str, feature_names: list[str] | None = None,
                  space: ParameterSpace | None = None) -> Dataset:
    """Valid records only, rows ordered by id; features default to all 11
    parameters in canonical order."""
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}")
    feature_names = list(feature_names or PARAM_NAMES)
    rows = [r for r in store.rows() if r["valid"]]
    if not rows:
        raise errors.NoValidRecords("no valid records in the store")
    X = np.array([[r[name] for name in feature_names] for r in rows], dtype=float)
    y = np.array([r[target] for r in rows], dtype=float)
    return Dataset(X=X, y=y, feature_names=feature_names, target_name=target)
