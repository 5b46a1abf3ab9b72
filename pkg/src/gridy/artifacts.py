"""On-disk layout of pipeline artifacts: JSON reports and CSV matrices.

Writers take a (partially) filled :class:`~gridy.pipeline.GridyResult`;
loaders rebuild the pieces a later stage needs, so every CLI subcommand can
start from the previous stage's directory.
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .ajive import SegmentationResult
from .data import read_matrix_csv, write_matrix_csv
from .dynamics import FactorDynamics, r2_per_variable
from .errors import ConfigError
from .rank_selection import RankReport
from .sca import ScaPf2Model


def dump_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"missing artifact: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


def _read(path, **kw):
    try:
        return read_matrix_csv(path, **kw)
    except FileNotFoundError:
        raise ConfigError(f"missing artifact: {path}") from None


def validate_report(path):
    import jsonschema

    schema = json.loads(resources.files("gridy").joinpath("schemas/report.schema.json").read_text())
    jsonschema.validate(json.loads(Path(path).read_text()), schema)


def network_rank(M, rel_tol=1e-8):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


# ------------------------------------------------------------------ rank


def rank_document(res):
    if res.rank_report is not None:
        obj = res.rank_report.to_dict()
    else:
        obj = {"xi": None, "reps": None, "voted_rank": res.initial_rank,
               "subjects": [{"subject": s, "group": res.group_of[s], "rank": int(r)}
                            for s, r in res.subject_ranks.items()]}
    obj["overridden"] = res.rank_report is None
    return obj


def write_rank(res, path):
    dump_json(path, rank_document(res))
    return {"initial_rank": int(res.initial_rank),
            "per_subject": {s: int(r) for s, r in res.subject_ranks.items()}}


def load_rank(path):
    """Per-subject ranks, voted rank and (when present) the full report."""
    obj = load_json(path)
    try:
        ranks = {row["subject"]: int(row["rank"]) for row in obj["subjects"]}
        voted = int(obj["voted_rank"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{path} is not a rank report") from None
    report = None if obj.get("overridden") else RankReport.from_dict(obj)
    return ranks, voted, report


# --------------------------------------------------------------- segment


def write_segment(res, directory):
    seg = res.segmentation
    d = Path(directory)
    names = list(res.variable_names)
    for i, s in enumerate(res.segment_subjects):
        write_matrix_csv(d / "joint" / f"{s}.csv", seg.joint_blocks[i], header=names)
        write_matrix_csv(d / "group" / f"{s}.csv", seg.group_blocks[i], header=names)
    write_matrix_csv(d / "joint_basis.csv", seg.joint_basis, header=[f"joint{j + 1}" for j in range(seg.joint_rank)],
                     row_labels=names)
    info = {
        "joint_rank": int(res.joint_rank),
        "group_rank": int(res.group_rank),
        "initial_rank": int(res.initial_rank),
        "thresholds": seg.thresholds,
        "stacked_singvals": _tolist(seg.stacked_singvals),
        "subjects": [{"subject": s, "group": res.group_of[s]} for s in res.segment_subjects],
        "fit_subjects": list(res.fit_subjects),
        "excluded": dict(sorted(res.excluded.items())),
        "variable_names": names,
    }
    dump_json(d / "segment.json", info)
    return {k: info[k] for k in ("joint_rank", "group_rank", "thresholds", "stacked_singvals")}


def load_segment(directory, res):
    """Fill the segmentation fields of ``res`` from a ``seg/`` directory."""
    d = Path(directory)
    info = load_json(d / "segment.json")
    subs = [row["subject"] for row in info["subjects"]]
    joint = [_read(d / "joint" / f"{s}.csv")[0] for s in subs]
    group = [_read(d / "group" / f"{s}.csv")[0] for s in subs]
    basis = _read(d / "joint_basis.csv", row_labels=True)[0]
    res.segmentation = SegmentationResult(
        joint_rank=int(info["joint_rank"]),
        joint_basis=basis.reshape(len(info["variable_names"]), -1),
        joint_blocks=joint,
        group_blocks=group,
        thresholds=info["thresholds"],
        stacked_singvals=np.asarray(info["stacked_singvals"]),
    )
    res.segment_subjects = subs
    res.fit_subjects = list(info["fit_subjects"])
    res.joint_rank = int(info["joint_rank"])
    res.group_rank = int(info["group_rank"])
    res.initial_rank = int(info["initial_rank"])
    res.excluded.update(info.get("excluded", {}))
    res.group_of.update({row["subject"]: int(row["group"]) for row in info["subjects"]})
    if not res.variable_names:
        res.variable_names = tuple(info["variable_names"])
    return res


# ------------------------------------------------------------------- fit


def model_summary(model):
    if model is None:
        return None
    return {
        "kind": model.kind,
        "rank": int(model.rank),
        "sse": float(model.sse),
        "n_iter": int(model.n_iter),
        "converged": bool(model.converged),
        "Phi": _tolist(model.Phi),
    }


def write_model(model, directory, prefix, subjects, variable_names):
    d = Path(directory)
    names = [f"{prefix}_{j + 1}" for j in range(model.rank)]
    write_matrix_csv(d / f"B_{prefix}.csv", model.B, header=names, row_labels=list(variable_names))
    write_matrix_csv(d / f"A_{prefix}.csv", model.A, header=names)
    write_matrix_csv(d / f"Phi_{prefix}.csv", model.Phi, header=names)
    write_matrix_csv(d / f"C_{prefix}.csv", model.C, header=names, row_labels=list(subjects))
    for k, s in enumerate(subjects):
        write_matrix_csv(d / "factors" / f"{prefix}_{s}.csv", model.factors(k), header=names)
        write_matrix_csv(d / "rotations" / f"{prefix}_{s}.csv", model.P[k], header=names)


def load_model(directory, prefix, subjects, summary):
    d = Path(directory)
    B = _read(d / f"B_{prefix}.csv", row_labels=True)[0]
    A = _read(d / f"A_{prefix}.csv")[0]
    Phi = _read(d / f"Phi_{prefix}.csv")[0]
    C = _read(d / f"C_{prefix}.csv", row_labels=True)[0]
    P = [_read(d / "rotations" / f"{prefix}_{s}.csv")[0] for s in subjects]
    r = A.shape[0]
    return ScaPf2Model(B=B.reshape(-1, r), A=A, P=P, C=C.reshape(-1, r), Phi=Phi,
                       sse_trace=[summary["sse"]] * summary["n_iter"], kind=summary["kind"],
                       converged=summary["converged"])


def write_fit(res, directory):
    d = Path(directory)
    names = list(res.variable_names)
    summary = {"model": res.config.model, "joint": model_summary(res.joint_model)}
    if res.joint_model is not None:
        write_model(res.joint_model, d, "joint", res.fit_subjects, names)
    for g in (1, 2):
        m = res.group_models.get(g)
        summary[f"group{g}"] = model_summary(m)
        if m is not None:
            write_model(m, d, f"group{g}", res.group_subjects(g), names)
    doc = dict(summary)
    doc["subjects"] = [{"subject": s, "group": res.group_of[s]} for s in res.fit_subjects]
    doc["variable_names"] = names
    doc["joint_rank"] = int(res.joint_rank)
    doc["group_rank"] = int(res.group_rank)
    dump_json(d / "fit.json", doc)
    return summary


def load_fit(directory, res):
    d = Path(directory)
    doc = load_json(d / "fit.json")
    res.fit_subjects = [row["subject"] for row in doc["subjects"]]
    res.group_of.update({row["subject"]: int(row["group"]) for row in doc["subjects"]})
    res.joint_rank = int(doc["joint_rank"])
    res.group_rank = int(doc["group_rank"])
    if not res.variable_names:
        res.variable_names = tuple(doc["variable_names"])
    elif list(res.variable_names) != list(doc["variable_names"]):
        raise ConfigError("variable names of the fit do not match the dataset")
    if doc["joint"] is not None:
        res.joint_model = load_model(d, "joint", res.fit_subjects, doc["joint"])
    for g in (1, 2):
        sm = doc[f"group{g}"]
        res.group_models[g] = load_model(d, f"group{g}", res.group_subjects(g), sm) if sm is not None else None
    return res


# -------------------------------------------------------------- dynamics


def variable_r2_rows(res, s):
    """Per-variable R^2 of subject ``s`` on each refitted factor."""
    dyn = res.dynamics[s]
    X = res.block(s).values
    rows = []
    for structure, F in (("joint", dyn.F_joint), (f"group{dyn.group}", dyn.F_group)):
        for j in range(F.shape[1]):
            r2, flags = r2_per_variable(X, F[:, j])
            for i, name in enumerate(res.variable_names):
                rows.append((s, dyn.group, structure, j + 1, name, float(r2[i]), bool(flags[i])))
    return rows


def write_r2_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "group", "structure", "factor", "variable", "r2", "zero_variance"])
        for row in rows:
            w.writerow([row[0], row[1], row[2], row[3], row[4], "%.17g" % row[5], int(row[6])])


def write_dynamics(res, directory):
    d = Path(directory)
    names = list(res.variable_names)
    for key, B in (("joint", res.loadings("joint")), ("group1", res.loadings("group1")),
                   ("group2", res.loadings("group2"))):
        write_matrix_csv(d / f"B_{key}.csv", B, row_labels=names, header=[f"{key}_{j + 1}" for j in range(B.shape[1])])
    subjects = []
    r2_rows = []
    for s in res.fit_subjects:
        dyn = res.dynamics[s]
        write_matrix_csv(d / "factors" / f"joint_{s}.csv", dyn.F_joint)
        write_matrix_csv(d / "factors" / f"group_{s}.csv", dyn.F_group)
        subjects.append({
            "subject": s,
            "group": dyn.group,
            "T": int(dyn.F_joint.shape[0]),
            "Psi_joint": [_tolist(m) for m in dyn.Psi_joint],
            "Psi_group": [_tolist(m) for m in dyn.Psi_group],
            "Sigma_eta_joint": _tolist(dyn.Sigma_eta_joint),
            "Sigma_eta_group": _tolist(dyn.Sigma_eta_group),
            "Sigma_E": _tolist(dyn.Sigma_E),
            "spectral_radius": dyn.spectral_radius,
            "sse_pf2": res.sse[s]["pf2"],
            "sse_refit": res.sse[s]["refit"],
        })
        r2_rows.extend(variable_r2_rows(res, s))
    doc = {"variable_names": names, "order": res.config.var_order, "joint_rank": int(res.joint_rank),
           "group_rank": int(res.group_rank), "subjects": subjects}
    dump_json(d / "dynamics.json", doc)
    write_r2_csv(d / "r2_per_variable.csv", r2_rows)
    return {
        "order": res.config.var_order,
        "subjects": [{k: row[k] for k in ("subject", "group", "spectral_radius", "sse_pf2", "sse_refit")}
                     for row in subjects],
    }


def _mat(x, r):
    a = np.asarray(x, dtype=float)
    return a.reshape(r, r) if a.size == 0 else a


def load_dynamics(directory, res):
    d = Path(directory)
    doc = load_json(d / "dynamics.json")
    if not res.variable_names:
        res.variable_names = tuple(doc["variable_names"])
    res.joint_rank = int(doc["joint_rank"])
    res.group_rank = int(doc["group_rank"])
    rj, rg = res.joint_rank, res.group_rank
    res.loaded_B = {}
    for key, r in (("joint", rj), ("group1", rg), ("group2", rg)):
        res.loaded_B[key] = _read(d / f"B_{key}.csv", row_labels=True)[0].reshape(-1, r)
    res.fit_subjects = []
    for row in doc["subjects"]:
        s, g, T = row["subject"], int(row["group"]), int(row["T"])
        res.fit_subjects.append(s)
        res.group_of[s] = g
        Fj = _read(d / "factors" / f"joint_{s}.csv", header=False)[0].reshape(T, rj)
        Fg = _read(d / "factors" / f"group_{s}.csv", header=False)[0].reshape(T, rg)
        res.dynamics[s] = FactorDynamics(
            subject=s, group=g, F_joint=Fj, F_group=Fg,
            Psi_joint=[_mat(m, rj) for m in row["Psi_joint"]],
            Psi_group=[_mat(m, rg) for m in row["Psi_group"]],
            Sigma_eta_joint=_mat(row["Sigma_eta_joint"], rj),
            Sigma_eta_group=_mat(row["Sigma_eta_group"], rg),
            Sigma_E=np.asarray(row["Sigma_E"], dtype=float),
            order=int(doc["order"]),
            spectral_radius=row["spectral_radius"],
        )
        res.sse[s] = {"pf2": row["sse_pf2"], "refit": row["sse_refit"]}
    return res


# --------------------------------------------------------------- network


def write_network(res, directory):
    d = Path(directory)
    names = list(res.variable_names)
    ranks = {}
    for s, net in res.networks.items():
        write_matrix_csv(d / f"{s}_directed.csv", net.directed, header=names, row_labels=names)
        write_matrix_csv(d / f"{s}_contemporaneous.csv", net.Sigma_zeta, header=names, row_labels=names)
        ranks[s] = network_rank(net.directed)
    for g, nets in res.group_networks.items():
        for kind, m in nets.items():
            write_matrix_csv(d / f"group{g}_{kind}_mean.csv", m, header=names, row_labels=names)
    return {"covariance": res.config.covariance, "directed_rank": ranks,
            "rank_bound": int(res.joint_rank + res.group_rank)}


class ArtifactWriter:
    """Sink for :func:`~gridy.pipeline.estimate`: writes each stage as it finishes."""

    LAYOUT = {"rank": "rank.json", "segment": "seg", "fit": "fit", "dynamics": "dyn", "network": "net"}
    WRITERS = {"rank": write_rank, "segment": write_segment, "fit": write_fit,
               "dynamics": write_dynamics, "network": write_network}

    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.report = {"version": __version__, "stages_completed": [], "excluded": [], "overrides": {}}

    def __call__(self, stage, res):
        self.report[stage] = self.WRITERS[stage](res, self.out / self.LAYOUT[stage])
        self.report["stages_completed"].append(stage)
        self.report["excluded"] = [{"subject": s, "reason": r} for s, r in sorted(res.excluded.items())]
        self.report["overrides"] = dict(sorted(res.overrides.items()))
        dump_json(self.out / "report.json", self.report)
