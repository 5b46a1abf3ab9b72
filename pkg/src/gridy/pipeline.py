"""End-to-end estimation: rank -> segment -> fit -> dynamics -> network.

:func:`estimate` runs every stage in memory on a dataset and hands each
finished stage to an optional ``sink(stage, result)`` callback;
:func:`run_pipeline` wires that callback to :class:`ArtifactWriter` so a
failing stage leaves the outputs of the earlier ones on disk.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import artifacts
from .ajive import segment
from .data import load_dataset
from .dynamics import build_network, fit_dynamics, group_mean
from .errors import ConfigError, GridyError, NumericalError, StageError
from .parallel import pmap
from .rank_selection import majority_vote, select_ranks
from .sca import fit_pf2, fit_sca_ind
from .seeding import split, stream

log = logging.getLogger(__name__)

STAGES = ("rank", "segment", "fit", "dynamics", "network")
FITTERS = {"pf2": fit_pf2, "ind": fit_sca_ind}


@dataclass
class PipelineConfig:
    manifest: str | None = None
    out: str | None = None
    seed: int = 0
    center: bool = True
    # rank selection
    xi: float = 0.5
    reps: int = 100
    noise_scale: str = "paper"
    max_initial_rank: int | None = None
    # segmentation
    ajive_reps: int = 100
    # overrides (None = estimate)
    rank: int | None = None
    rank_joint: int | None = None
    rank_group: int | None = None
    # factor model
    model: str = "pf2"
    tol: float = 1e-8
    max_iter: int = 500
    n_starts: int = 5
    solver: str = "als"
    # dynamics / network
    var_order: int = 1
    covariance: str = "paper"
    stages: tuple = STAGES

    def __post_init__(self):
        self.stages = tuple(self.stages)
        self.validate()

    def validate(self):
        if self.model not in FITTERS:
            raise ConfigError(f"model must be one of {sorted(FITTERS)}, got {self.model!r}")
        if self.solver not in ("als", "hybrid"):
            raise ConfigError(f"solver must be 'als' or 'hybrid', got {self.solver!r}")
        if self.covariance not in ("paper", "derived"):
            raise ConfigError(f"covariance must be 'paper' or 'derived', got {self.covariance!r}")
        if self.noise_scale not in ("paper", "sqrt"):
            raise ConfigError(f"noise_scale must be 'paper' or 'sqrt', got {self.noise_scale!r}")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stage(s) {bad}; valid: {list(STAGES)}")
        if not (0.0 < self.xi <= 1.0):
            raise ConfigError("xi must lie in (0, 1]")
        if self.reps < 1 or self.ajive_reps < 1 or self.max_iter < 1 or self.n_starts < 1:
            raise ConfigError("reps, ajive_reps, max_iter and n_starts must be positive")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.var_order < 1:
            raise ConfigError("var_order must be >= 1")
        for name in ("rank", "rank_joint", "rank_group", "max_initial_rank"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.rank is not None and self.rank < 1:
            raise ConfigError("rank override must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["stages"] = list(self.stages)
        return d

    @classmethod
    def from_dict(cls, obj):
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class GridyResult:
    dataset: object
    config: PipelineConfig
    variable_names: tuple = ()
    group_of: dict = field(default_factory=dict)
    rank_report: object = None
    initial_rank: int = 0
    subject_ranks: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    segmentation: object = None
    segment_subjects: list = field(default_factory=list)
    joint_rank: int = 0
    group_rank: int = 0
    fit_subjects: list = field(default_factory=list)
    joint_model: object = None
    group_models: dict = field(default_factory=dict)
    dynamics: dict = field(default_factory=dict)
    networks: dict = field(default_factory=dict)
    group_networks: dict = field(default_factory=dict)
    sse: dict = field(default_factory=dict)
    loaded_B: dict = field(default_factory=dict)

    def block(self, subject):
        return self.dataset.blocks[self.dataset.subjects.index(subject)]

    def group_subjects(self, g):
        return [s for s in self.fit_subjects if self.group_of[s] == g]

    @property
    def d(self):
        return len(self.variable_names)

    def loadings(self, structure):
        if structure in self.loaded_B:
            return self.loaded_B[structure]
        if structure == "joint":
            return self.joint_model.B if self.joint_model is not None else self._empty(0)
        g = int(structure[-1])
        m = self.group_models.get(g)
        return m.B if m is not None else self._empty(0)

    def _empty(self, r):
        return np.zeros((self.d, r))


@contextlib.contextmanager
def _stage(name):
    log.info("stage %s: start", name)
    try:
        yield
    except StageError:
        raise
    except GridyError as exc:
        log.error("stage %s failed: %s", name, exc)
        raise StageError(name, exc) from exc
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("stage %s failed: %s", name, exc)
        raise StageError(name, NumericalError(str(exc))) from exc
    log.info("stage %s: done", name)


def _stage_rank(res, cfg, threads):
    ds = res.dataset
    if cfg.rank is not None:
        res.overrides["rank"] = cfg.rank
        log.info("initial rank overridden: %d (rank selection skipped)", cfg.rank)
        res.subject_ranks = {s: cfg.rank for s in ds.subjects}
        res.initial_rank = cfg.rank
        return
    rep = select_ranks(ds, L=cfg.reps, xi=cfg.xi, seed=cfg.seed, noise_scale=cfg.noise_scale, threads=threads)
    res.rank_report = rep
    res.subject_ranks = dict(rep.per_subject_rank)
    for s, r in rep.per_subject_rank.items():
        if r == 0:
            res.excluded[s] = "initial rank 0"
        elif cfg.max_initial_rank is not None and r > cfg.max_initial_rank:
            res.excluded[s] = f"initial rank {r} above {cfg.max_initial_rank}"
    kept = [r for s, r in rep.per_subject_rank.items() if s not in res.excluded]
    if not kept:
        raise NumericalError("no subject has a usable initial rank")
    res.initial_rank = majority_vote(kept)
    if res.excluded:
        log.info("excluded after rank selection: %s", sorted(res.excluded))


def _stage_segment(res, cfg, threads):
    ds = res.dataset
    subs = [s for s in ds.subjects if s not in res.excluded]
    groups = {res.group_of[s] for s in subs}
    if groups != {1, 2}:
        raise ConfigError(f"both groups need retained subjects, got groups {sorted(groups)}")
    r = res.initial_rank
    mats = [res.block(s).values for s in subs]
    if r > min(min(m.shape) for m in mats):
        raise ConfigError(f"initial rank {r} exceeds min(T_k, d)")
    if cfg.rank_joint is not None:
        res.overrides["rank_joint"] = cfg.rank_joint
    seg = segment(mats, r, joint_rank=cfg.rank_joint, reps=cfg.ajive_reps,
                  rng=stream(cfg.seed, "ajive"), threads=threads)
    res.segmentation = seg
    res.segment_subjects = subs
    res.joint_rank = seg.joint_rank
    if cfg.rank_group is not None:
        res.overrides["rank_group"] = cfg.rank_group
        log.info("group rank overridden: %d (implied %d)", cfg.rank_group, r - seg.joint_rank)
        res.group_rank = cfg.rank_group
    else:
        res.group_rank = r - seg.joint_rank
    if res.joint_rank + res.group_rank > r:
        raise ConfigError(
            f"joint rank {res.joint_rank} + group rank {res.group_rank} exceeds initial rank {r}"
        )
    fit_subs = []
    for s in subs:
        if res.group_rank > 0 and res.subject_ranks.get(s, r) <= res.joint_rank:
            res.excluded[s] = "group-individual rank 0"
        else:
            fit_subs.append(s)
    res.fit_subjects = fit_subs
    log.info("joint rank %d, group rank %d, %d subjects retained", res.joint_rank, res.group_rank, len(fit_subs))


def _stage_fit(res, cfg, threads):
    fitter = FITTERS[cfg.model]
    seg = res.segmentation
    idx = {s: i for i, s in enumerate(res.segment_subjects)}
    rng_j, rng_1, rng_2 = split(stream(cfg.seed, "fit"), 3)
    opts = dict(tol=cfg.tol, max_iter=cfg.max_iter, n_starts=cfg.n_starts, solver=cfg.solver)
    if res.joint_rank > 0:
        blocks = [seg.joint_blocks[idx[s]] for s in res.fit_subjects]
        res.joint_model = fitter(blocks, res.joint_rank, rng=rng_j, **opts)
        _log_fit("joint", res.joint_model)
    for g, rng in ((1, rng_1), (2, rng_2)):
        subs = res.group_subjects(g)
        if res.group_rank == 0:
            res.group_models[g] = None
            continue
        if not subs:
            raise ConfigError(f"group {g} has no retained subjects")
        blocks = [seg.group_blocks[idx[s]] for s in subs]
        res.group_models[g] = fitter(blocks, res.group_rank, rng=rng, **opts)
        _log_fit(f"group{g}", res.group_models[g])


def _log_fit(name, model):
    if not model.converged:
        log.info("%s fit stopped at max_iter (%d) with sse %.6g", name, model.n_iter, model.sse)


def _pf2_factors(res, s):
    """Factor estimates straight from the SCA fits (before refitting)."""
    T = res.block(s).values.shape[0]
    out = []
    g = res.group_of[s]
    for model, subs in ((res.joint_model, res.fit_subjects), (res.group_models.get(g), res.group_subjects(g))):
        out.append(model.factors(subs.index(s)) if model is not None else np.zeros((T, 0)))
    return out


def _stage_dynamics(res, cfg, threads):
    Bj = res.loadings("joint")

    def one(s):
        b = res.block(s)
        Bg = res.loadings(f"group{b.group}")
        dyn = fit_dynamics(s, b.group, b.values, Bj, Bg, p=cfg.var_order)
        Fj, Fg = _pf2_factors(res, s)
        sse_pf2 = float(np.sum((b.values - Fj @ Bj.T - Fg @ Bg.T) ** 2))
        sse_refit = float(np.sum((b.values - dyn.F_joint @ Bj.T - dyn.F_group @ Bg.T) ** 2))
        return s, dyn, {"pf2": sse_pf2, "refit": sse_refit}

    for s, dyn, sse in pmap(one, res.fit_subjects, threads=threads):
        res.dynamics[s] = dyn
        res.sse[s] = sse


def _stage_network(res, cfg, threads):
    if cfg.var_order != 1:
        raise ConfigError("network conversion needs var_order = 1")
    Bj = res.loadings("joint")
    for s in res.fit_subjects:
        dyn = res.dynamics[s]
        Bg = res.loadings(f"group{dyn.group}")
        res.networks[s] = build_network(Bj, Bg, dyn.Psi_joint, dyn.Psi_group, dyn.Sigma_E,
                                        dyn.Sigma_eta_joint, dyn.Sigma_eta_group, covariance=cfg.covariance)
    for g in (1, 2):
        subs = res.group_subjects(g)
        if subs:
            res.group_networks[g] = {
                "directed": group_mean([res.networks[s].directed for s in subs]),
                "contemporaneous": group_mean([res.networks[s].Sigma_zeta for s in subs]),
            }


_RUNNERS = {
    "rank": _stage_rank,
    "segment": _stage_segment,
    "fit": _stage_fit,
    "dynamics": _stage_dynamics,
    "network": _stage_network,
}


def estimate(dataset, config=None, threads=None, sink=None):
    """Run the enabled stages on ``dataset``; returns a :class:`GridyResult`.

    Stages run in order and each needs its predecessors. ``sink(stage,
    result)`` is called after every completed stage.
    """
    cfg = config or PipelineConfig()
    res = new_result(dataset, cfg)
    return run_stages(res, [s for s in STAGES if s in cfg.stages], threads, sink)


def new_result(dataset, cfg):
    return GridyResult(
        dataset=dataset,
        config=cfg,
        variable_names=tuple(dataset.variable_names),
        group_of={b.subject_id: b.group for b in dataset.blocks},
    )


def run_stages(res, stages, threads=None, sink=None):
    """Run ``stages`` (in pipeline order) on a partially filled result."""
    for name in STAGES:
        if name not in stages:
            continue
        with _stage(name):
            _RUNNERS[name](res, res.config, threads)
        if sink is not None:
            sink(name, res)
    return res


def _attach_log(out):
    handler = logging.FileHandler(Path(out) / "pipeline.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("gridy")
    prev = root.level
    root.addHandler(handler)
    if root.level == logging.NOTSET or root.level > logging.INFO:
        root.setLevel(logging.INFO)
    return handler, prev


def run_pipeline(config, threads=None):
    """Load the manifest, run all enabled stages and write the artifact directory.

    Returns the :class:`GridyResult`. Raises :class:`StageError` on a stage
    failure (artifacts of completed stages are kept).
    """
    cfg = config
    if cfg.manifest is None or cfg.out is None:
        raise ConfigError("pipeline needs both a manifest and an output directory")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    handler, prev_level = _attach_log(out)
    try:
        artifacts.dump_json(out / "config.json", cfg.to_dict())
        with _stage("load"):
            dataset = load_dataset(cfg.manifest, center=cfg.center)
        writer = artifacts.ArtifactWriter(out)
        writer.report["config"] = cfg.to_dict()
        writer.report["subjects"] = [{"subject": b.subject_id, "group": b.group} for b in dataset.blocks]
        res = estimate(dataset, cfg, threads=threads, sink=writer)
        artifacts.validate_report(out / "report.json")
        return res
    finally:
        logging.getLogger("gridy").removeHandler(handler)
        logging.getLogger("gridy").setLevel(prev_level)
        handler.close()
