"""Experiment runner: baseline comparisons, center-count sweeps, attack-type scenarios.

Each scenario is expanded into (seed, user) cells. A cell generates the
domains for its seed, trains every condition it needs and evaluates on
the held-out user with a threshold taken from the data-center scores.
Rows are sorted on a canonical key before anything is written, so output
files do not depend on scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import os
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .config import FederationConfig
from .data import DomainDataset, DomainSpec, generate_domain, leave_one_out_split
from .errors import FedSimError, ProtocolError, SpecError
from .federation import fused_predict, run_federation, train_all, train_single
from .metrics import ScoreSet, cross_domain_threshold, hter
from .model import forward

SCENARIOS = ("table2", "sweep-centers", "2d-split", "3d-holdout", "custom")
METHODS = ("single", "fused", "federated", "all")
ROW_FIELDS = ("method", "centers", "user", "seed", "num_centers", "hter", "eer", "auc", "threshold")


class ExperimentError(FedSimError):
    """A failure inside one experiment cell, annotated with where it happened."""


# Shift geometry of the default benchmarks, per scenario. In the baseline
# comparison attack types vary by domain so that no single data center
# has seen every instrument.
_GEOMETRY = {
    "table2": {
        "O": dict(rotation=0.0, translation=0.0, attack_types=("print", "video")),
        "C": dict(rotation=0.8, translation=0.5, attack_types=("print",)),
        "I": dict(rotation=-0.8, translation=-0.5, attack_types=("video",)),
        "M": dict(rotation=1.6, translation=1.0, attack_types=("print", "video")),
    },
    "2d-split": {
        "I": dict(rotation=-0.4, translation=0.5, attack_types=("print",)),
        "O": dict(rotation=0.4, translation=-0.5, attack_types=("video",)),
        "M": dict(rotation=0.0, translation=0.0, attack_types=("print", "video")),
    },
    "3d-holdout": {
        "O": dict(rotation=-0.4, translation=0.0, attack_types=("print", "video")),
        "C": dict(rotation=0.4, translation=0.5, attack_types=("print", "video")),
        "M": dict(rotation=0.8, translation=-0.5, attack_types=("print", "video")),
        "H": dict(rotation=0.3, translation=0.25, attack_types=("mask-A",)),
        "3": dict(rotation=0.0, translation=-0.25, attack_types=("mask-A",)),
    },
}
_GEOMETRY["custom"] = _GEOMETRY["table2"]
_GEOMETRY["sweep-centers"] = dict(
    _GEOMETRY["table2"], S=dict(rotation=-1.6, translation=-1.0, attack_types=("print", "video"))
)
_BENCH_NOISE = 0.5


def default_domains(scenario: str) -> list[DomainSpec]:
    """Domain specs of the default synthetic benchmark for ``scenario``."""
    if scenario not in _GEOMETRY:
        raise SpecError(f"unknown scenario {scenario!r}")
    return [
        DomainSpec(domain_id=d, noise_sigma=_BENCH_NOISE, seed=i, **kw)
        for i, (d, kw) in enumerate(_GEOMETRY[scenario].items())
    ]


_DEFAULT_USERS = {"sweep-centers": ["C"], "2d-split": ["M"], "3d-holdout": ["3"]}


@dataclass
class ExperimentSpec:
    """What to run.

    ``users`` defaults to every domain for ``table2``/``custom`` and to the
    scenario's fixed user otherwise. ``combinations`` lists center sets
    for the sweep; by default the sweep grows a prefix of the remaining
    domains in declared order from 2 up to ``max_centers``.
    ``optional_center`` names the extra mask-attack center in
    ``3d-holdout``.
    """

    scenario: str = "table2"
    domains: list = field(default_factory=list)
    config: FederationConfig = field(default_factory=FederationConfig)
    seeds: list = field(default_factory=lambda: list(range(30)))
    output: str | None = None
    users: list | None = None
    combinations: list | None = None
    max_centers: int | None = None
    optional_center: str = "H"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise SpecError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not self.domains:
            self.domains = default_domains(self.scenario)
        self.domains = [d if isinstance(d, DomainSpec) else DomainSpec.from_dict(d) for d in self.domains]
        if isinstance(self.config, dict):
            self.config = FederationConfig.from_dict(self.config)
        if not self.seeds:
            raise SpecError("seed list must be non-empty")
        self.seeds = [int(s) for s in self.seeds]
        ids = self.domain_ids
        if len(set(ids)) != len(ids):
            raise SpecError(f"duplicate domain ids {ids}")
        if len(ids) < 2:
            raise SpecError("need at least two domains")
        if self.users is None:
            self.users = list(_DEFAULT_USERS.get(self.scenario, ids))
        missing = [u for u in self.users if u not in ids]
        if missing:
            raise SpecError(f"users {missing} are not among the domains {ids}")
        if self.scenario == "3d-holdout" and self.optional_center not in ids:
            raise SpecError(f"3d-holdout needs the optional center {self.optional_center!r}")
        if self.combinations is not None:
            for combo in self.combinations:
                bad = [c for c in combo if c not in ids]
                if bad:
                    raise SpecError(f"combination {combo} names unknown domains {bad}")

    @property
    def domain_ids(self) -> list[str]:
        return [d.domain_id for d in self.domains]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "domains": [d.to_dict() for d in self.domains],
            "config": self.config.to_dict(),
            "seeds": list(self.seeds),
            "output": self.output,
            "users": self.users,
            "combinations": self.combinations,
            "max_centers": self.max_centers,
            "optional_center": self.optional_center,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        d = dict(d)
        if "num_seeds" in d:
            d["seeds"] = list(range(int(d.pop("num_seeds"))))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentSpec:
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class ResultRow:
    method: str
    centers: str
    user: str
    seed: int
    num_centers: int
    hter: float
    eer: float
    auc: float
    threshold: float

    def sort_key(self):
        return (self.seed, self.user, METHODS.index(self.method), self.num_centers, self.centers)


def _seeded_domains(specs: Sequence[DomainSpec], seed: int) -> list[DomainDataset]:
    out = []
    for i, spec in enumerate(specs):
        derived = int(np.random.SeedSequence([seed, i, spec.seed]).generate_state(1)[0])
        out.append(generate_domain(DomainSpec.from_dict(dict(spec.to_dict(), seed=derived))))
    return out


def _evaluate(method, score_fn: Callable, centers, user, seed) -> ResultRow:
    center_sets = [ScoreSet(score_fn(c.features), c.labels) for c in centers]
    threshold = cross_domain_threshold(center_sets)
    report = hter(ScoreSet(score_fn(user.features), user.labels), threshold)
    return ResultRow(
        method=method,
        centers="&".join(c.domain_id for c in centers),
        user=user.domain_id,
        seed=seed,
        num_centers=len(centers),
        hter=report.hter,
        eer=report.eer,
        auc=report.auc,
        threshold=report.threshold,
    )


_SINGLE_CACHE: OrderedDict = OrderedDict()
_SINGLE_CACHE_SIZE = 32


def _cached_single(center: DomainDataset, config: FederationConfig):
    """A Single model depends only on the center's data and the config.

    Every user rotation of a seed reuses the same centers, so the model is
    trained once and shared.
    """
    digest = hashlib.sha256(center.features.tobytes() + center.labels.tobytes()).hexdigest()
    key = (config, center.domain_id, digest)
    if key in _SINGLE_CACHE:
        _SINGLE_CACHE.move_to_end(key)
        return _SINGLE_CACHE[key]
    model = train_single(center, config)
    _SINGLE_CACHE[key] = model
    if len(_SINGLE_CACHE) > _SINGLE_CACHE_SIZE:
        _SINGLE_CACHE.popitem(last=False)
    return model


def _baseline_rows(centers, user, config, seed, methods=METHODS) -> list[ResultRow]:
    rows = []
    singles = [_cached_single(c, config) for c in centers] if {"single", "fused"} & set(methods) else []
    if "single" in methods:
        for c, m in zip(centers, singles):
            rows.append(_evaluate("single", lambda X, m=m: forward(m, X), [c], user, seed))
    if "fused" in methods:
        rows.append(_evaluate("fused", lambda X: fused_predict(singles, X), centers, user, seed))
    if "federated" in methods:
        fed, _ = run_federation(centers, config)
        rows.append(_evaluate("federated", lambda X: forward(fed, X), centers, user, seed))
    if "all" in methods:
        pooled = train_all(centers, config)
        rows.append(_evaluate("all", lambda X: forward(pooled, X), centers, user, seed))
    return rows


def _sweep_combinations(spec: ExperimentSpec, user: str) -> list[list[str]]:
    if spec.combinations is not None:
        return [list(c) for c in spec.combinations if user not in c]
    rest = [d for d in spec.domain_ids if d != user]
    top = len(rest) if spec.max_centers is None else min(spec.max_centers, len(rest))
    if top < 2:
        raise SpecError("a sweep needs at least two candidate data centers")
    return [rest[:k] for k in range(2, top + 1)]


def _pick(centers, ids):
    by_id = {c.domain_id: c for c in centers}
    return [by_id[i] for i in ids]


def run_cell(spec: ExperimentSpec, seed: int, user: str) -> list[ResultRow]:
    """All rows for one (seed, user) pair."""
    try:
        domains = _seeded_domains(spec.domains, seed)
        config = spec.config.replace(master_seed=seed)
        centers, user_data = leave_one_out_split(domains, user)
        if spec.scenario in ("table2", "custom"):
            return _baseline_rows(centers, user_data, config, seed)
        if spec.scenario == "2d-split":
            return _baseline_rows(centers, user_data, config, seed, ("single", "fused", "federated"))
        if spec.scenario == "3d-holdout":
            without = [c for c in centers if c.domain_id != spec.optional_center]
            rows = _baseline_rows(without, user_data, config, seed, ("federated",))
            rows += _baseline_rows(centers, user_data, config, seed, ("federated",))
            return rows
        rows = []
        for combo in _sweep_combinations(spec, user):
            rows += _baseline_rows(_pick(centers, combo), user_data, config, seed, ("federated",))
        return rows
    except FedSimError as exc:
        raise ExperimentError(
            f"scenario={spec.scenario} seed={seed} user={user}: {type(exc).__name__}: {exc}"
        ) from exc


def _run_cell_from_dict(spec_dict, seed, user):
    return run_cell(ExperimentSpec.from_dict(spec_dict), seed, user)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FEDSIM_THREADS", "1")))
    except ValueError:
        raise SpecError("FEDSIM_THREADS must be an integer") from None


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    """Run every (seed, user) cell and return rows in canonical order.

    Cells run in up to ``FEDSIM_THREADS`` worker processes.
    """
    cells = [(seed, user) for seed in spec.seeds for user in spec.users]
    workers = min(worker_count(), len(cells))
    if workers <= 1:
        chunks = [run_cell(spec, s, u) for s, u in cells]
    else:
        spec_dict = spec.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell_from_dict, spec_dict, s, u) for s, u in cells]
            chunks = [f.result() for f in futures]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=ResultRow.sort_key)
    if spec.output is not None:
        write_outputs(rows, spec.output)
    return rows


def _means(rows: Sequence[ResultRow]) -> dict:
    out = {"n": len(rows)}
    for key in ("hter", "eer", "auc"):
        mean = float(np.mean([getattr(r, key) for r in rows]))
        out[key] = mean
        out[f"{key}_pct"] = round(100.0 * mean, 2)
    return out


def summarize(rows: Sequence[ResultRow]) -> dict:
    """Per-method means, pairwise AUC ordering flags and the per-K trend."""
    if not rows:
        raise ProtocolError("cannot summarize zero rows")
    present = [m for m in METHODS if any(r.method == m for r in rows)]
    methods = {m: _means([r for r in rows if r.method == m]) for m in present}
    ordering = {
        f"{a}<{b}": methods[a]["auc"] < methods[b]["auc"] for a, b in itertools.combinations(present, 2)
    }
    by_k = {}
    for m in present:
        ks = sorted({r.num_centers for r in rows if r.method == m})
        by_k[m] = {str(k): _means([r for r in rows if r.method == m and r.num_centers == k]) for k in ks}
    summary = {"methods": methods, "ordering": ordering, "by_num_centers": by_k}
    fed_k = by_k.get("federated", {})
    if len(fed_k) >= 2:
        summary["spearman_auc_vs_centers"] = sweep_trend(rows)
    return summary


def sweep_trend(rows: Sequence[ResultRow], method: str = "federated") -> float:
    """Spearman correlation between center count and mean AUC."""
    ks = sorted({r.num_centers for r in rows if r.method == method})
    if len(ks) < 2:
        raise ProtocolError("need at least two center counts for a trend")
    means = [float(np.mean([r.auc for r in rows if r.method == method and r.num_centers == k])) for k in ks]
    rho = spearmanr(ks, means).statistic
    return float(rho) if np.isfinite(rho) else 0.0


def format_summary(summary: dict) -> str:
    lines = [f"{'method':<10} {'n':>5} {'HTER(%)':>8} {'EER(%)':>8} {'AUC(%)':>8}"]
    for m, s in summary["methods"].items():
        lines.append(f"{m:<10} {s['n']:>5} {s['hter_pct']:>8.2f} {s['eer_pct']:>8.2f} {s['auc_pct']:>8.2f}")
    for m, per_k in summary["by_num_centers"].items():
        if len(per_k) > 1:
            for k, s in per_k.items():
                lines.append(f"{m + ' K=' + k:<16} {s['hter_pct']:>8.2f} {s['eer_pct']:>8.2f} {s['auc_pct']:>8.2f}")
    if "spearman_auc_vs_centers" in summary:
        lines.append(f"spearman(K, AUC) = {summary['spearman_auc_vs_centers']:.3f}")
    return "\n".join(lines)


def write_rows(rows: Sequence[ResultRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in rows:
            d = asdict(r)
            w.writerow([repr(d[f]) if isinstance(d[f], float) else d[f] for f in ROW_FIELDS])


def read_rows(path) -> list[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise SpecError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for rec in reader:
            rows.append(
                ResultRow(
                    method=rec["method"],
                    centers=rec["centers"],
                    user=rec["user"],
                    seed=int(rec["seed"]),
                    num_centers=int(rec["num_centers"]),
                    hter=float(rec["hter"]),
                    eer=float(rec["eer"]),
                    auc=float(rec["auc"]),
                    threshold=float(rec["threshold"]),
                )
            )
    return rows


def write_outputs(rows: Sequence[ResultRow], out_dir) -> None:
    """``rows.csv`` plus ``summary.json`` in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / "rows.csv")
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summarize(rows), fh, indent=2, sort_keys=True)
        fh.write("\n")
