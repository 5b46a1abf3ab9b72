"""Monte-Carlo evaluation of the estimation pipeline on simulated data."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import center_columns
from .dynamics import yule_walker
from .errors import GridyError
from .metrics import column_congruence, congruence, r2_structure, rmse_structure
from .parallel import pmap
from .pipeline import PipelineConfig, estimate
from .sca import align_to_truth, alignment_matrix
from .simulation import simulate_dataset

log = logging.getLogger(__name__)

MEASURES = ("r2", "rmse", "cc_B", "cc_F", "cc_Psi")
STRUCTURES = ("joint", "group1", "group2")
CONFIG_COLUMNS = ("d", "T", "K", "r_J", "r_G", "corr_type", "c", "sigma_xi", "sigma_eps", "seed")
TIDY_COLUMNS = ("rep",) + CONFIG_COLUMNS + ("structure", "measure", "value", "status")
RANK_COLUMNS = ("r_J", "r_G", "c", "d", "T", "estimated_rank", "count")


def replication_seed(seed, rep):
    """Seed of replication ``rep``; independent of scheduling."""
    return int(np.random.SeedSequence([int(seed), int(rep)]).generate_state(1, dtype=np.uint32)[0])


def truth_transition(truth, structure):
    """Factor transition in the scale fixed by unit-norm loading columns."""
    if structure == "joint":
        B, C, Psi = truth.B_joint, truth.C_joint[0], truth.Psi_joint
    else:
        B, C, Psi = truth.B_group(int(structure[-1])), truth.C_group[0], truth.Psi_group
    D = np.linalg.norm(B, axis=0) * np.diag(C)
    return (D[:, None] * Psi) / D[None, :]


def _structure_parts(res, truth, truth_index, structure, factors):
    if structure == "joint":
        subs = res.fit_subjects
        B_true = truth.B_joint
    else:
        g = int(structure[-1])
        subs = res.group_subjects(g)
        B_true = truth.B_group(g)
    B_hat = res.loadings(structure)
    F_hat, F_true, signal, X = [], [], [], []
    for s in subs:
        k = truth_index[s]
        dyn = res.dynamics[s]
        if factors == "refit":
            Fh = dyn.F_joint if structure == "joint" else dyn.F_group
        else:
            model = res.joint_model if structure == "joint" else res.group_models[dyn.group]
            pool = res.fit_subjects if structure == "joint" else res.group_subjects(dyn.group)
            Fh = model.factors(pool.index(s))
        Ft = truth.F_joint[k] if structure == "joint" else truth.F_group[k]
        sig = Ft @ B_true.T
        if res.config.center:
            sig = center_columns(sig)
        F_hat.append(Fh)
        F_true.append(Ft)
        signal.append(sig)
        X.append(res.block(s).values)
    return subs, B_hat, B_true, F_hat, F_true, signal, X


def evaluate_result(res, truth, truth_subjects=None, factors="refit"):
    """Measures for every structure: list of ``(structure, measure, value, status)``.

    Congruences need the estimated rank to match the truth; otherwise they
    are reported as NaN with status ``rank_mismatch``.
    """
    if truth_subjects is None:
        truth_subjects = list(res.dataset.subjects)
    truth_index = {s: i for i, s in enumerate(truth_subjects)}
    out = []
    for structure in STRUCTURES:
        subs, B_hat, B_true, F_hat, F_true, signal, X = _structure_parts(res, truth, truth_index, structure, factors)
        if not subs:
            out.extend((structure, m, math.nan, "no_subjects") for m in MEASURES)
            continue
        fitted = [F @ B_hat.T for F in F_hat]
        out.append((structure, "r2", r2_structure(X, fitted), "ok"))
        out.append((structure, "rmse", rmse_structure(signal, fitted), "ok"))
        if B_hat.shape != B_true.shape or B_true.shape[1] == 0:
            out.extend((structure, m, math.nan, "rank_mismatch") for m in ("cc_B", "cc_F", "cc_Psi"))
            continue
        perm, signs, aligned = align_to_truth(B_hat, B_true)
        Q = alignment_matrix(perm, signs)
        out.append((structure, "cc_B", column_congruence(B_true, aligned), "ok"))
        out.append((structure, "cc_F", float(np.mean([column_congruence(Ft, Fh @ Q) for Ft, Fh in zip(F_true, F_hat)])), "ok"))
        target = truth_transition(truth, structure)
        cc = []
        for s, Fh in zip(subs, F_hat):
            if factors == "refit":
                dyn = res.dynamics[s]
                psi = (dyn.Psi_joint if structure == "joint" else dyn.Psi_group)[0]
            else:
                psi = yule_walker(Fh, 1)[0][0]
            cc.append(congruence(target, Q.T @ psi @ Q))
        out.append((structure, "cc_Psi", float(np.mean(cc)), "ok"))
    return out


@dataclass
class EvaluationReport:
    rows: list = field(default_factory=list)
    rank_rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def values(self, structure, measure, **where):
        return np.array([
            r["value"] for r in self.rows
            if r["structure"] == structure and r["measure"] == measure and r["status"] == "ok"
            and all(r[k] == v for k, v in where.items())
        ], dtype=float)

    def median(self, structure, measure, **where):
        v = self.values(structure, measure, **where)
        return float(np.median(v)) if v.size else math.nan

    def rank_frequency(self, key="estimated_rank"):
        counts = Counter(
            (r["r_J"], r["r_G"], r["c"], r["d"], r["T"], r[key]) for r in self.rank_rows if r[key] is not None
        )
        return [dict(zip(RANK_COLUMNS, k + (n,))) for k, n in sorted(counts.items())]

    def to_csv(self, path):
        write_rows(path, TIDY_COLUMNS, self.rows)

    def rank_frequency_csv(self, path):
        write_rows(path, RANK_COLUMNS, self.rank_frequency())


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    return "" if v is None else str(v)


def write_rows(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def run_replication(sim_config, rep, options=None, rank_mode="oracle", factors="refit", threads=1):
    """One simulate-and-estimate replication; returns ``(rows, rank_row, error)``."""
    options = options or PipelineConfig()
    seed = replication_seed(sim_config.seed, rep)
    cfg = sim_config.with_(seed=seed)
    echo = {k: getattr(sim_config, k) for k in CONFIG_COLUMNS}
    rank_row = {"rep": rep, **echo, "estimated_rank": None, "estimated_joint_rank": None}
    overrides = {}
    if rank_mode == "oracle":
        overrides = dict(rank=cfg.r_J + cfg.r_G, rank_joint=cfg.r_J, rank_group=cfg.r_G)
    elif rank_mode != "estimated":
        raise ValueError(f"rank_mode must be 'oracle' or 'estimated', got {rank_mode!r}")
    pcfg = replace(options, seed=seed, **overrides)
    try:
        ds, truth = simulate_dataset(cfg)
        if pcfg.center:
            ds = ds.centered()
        res = estimate(ds, pcfg, threads=threads)
        if res.rank_report is not None:
            rank_row["estimated_rank"] = res.rank_report.voted_rank
        if res.segmentation is not None:
            rank_row["estimated_joint_rank"] = res.joint_rank
        rows = []
        if "dynamics" in pcfg.stages:
            for structure, measure, value, status in evaluate_result(res, truth, factors=factors):
                rows.append({"rep": rep, **echo, "structure": structure, "measure": measure,
                             "value": value, "status": status})
        return rows, rank_row, None
    except GridyError as exc:
        log.warning("replication %d failed: %s", rep, exc)
        rows = [{"rep": rep, **echo, "structure": s, "measure": m, "value": math.nan, "status": f"failed: {exc}"}
                for s in STRUCTURES for m in MEASURES]
        return rows, rank_row, str(exc)


def run_experiment(grid, options=None, reps=20, rank_mode="oracle", factors="refit", threads=None):
    """Run ``reps`` replications for every config in ``grid``.

    Replication seeds derive from each config's ``seed`` and the replication
    index, so results do not depend on the thread count.
    """
    jobs = [(cfg, rep) for cfg in grid for rep in range(reps)]
    results = pmap(lambda job: run_replication(job[0], job[1], options, rank_mode, factors, threads=1),
                   jobs, threads=threads)
    report = EvaluationReport()
    for (cfg, rep), (rows, rank_row, err) in zip(jobs, results):
        report.rows.extend(rows)
        report.rank_rows.append(rank_row)
        if err is not None:
            report.failures.append({"rep": rep, "config": cfg.to_dict(), "error": err})
    return report
