"""Tidy CSV exports for plotting (box plots, rank bars, R^2 per variable, heatmaps)."""

from __future__ import annotations

from pathlib import Path

from .artifacts import variable_r2_rows, write_r2_csv
from .data import write_matrix_csv
from .experiment import EvaluationReport


def emit_plot_data(report, out_dir):
    """Write the plot tables available in ``report``; returns the written paths.

    ``report`` is an :class:`~gridy.experiment.EvaluationReport` (measure
    box-plot data and rank frequencies) or a pipeline result (per-variable
    R^2 and group-mean network heatmaps).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(report, EvaluationReport):
        report.to_csv(out / "measures.csv")
        report.rank_frequency_csv(out / "rank_frequency.csv")
        written += [out / "measures.csv", out / "rank_frequency.csv"]
        return written
    res = report
    if res.dynamics:
        rows = [row for s in res.fit_subjects for row in variable_r2_rows(res, s)]
        write_r2_csv(out / "r2_per_variable.csv", rows)
        written.append(out / "r2_per_variable.csv")
    names = list(res.variable_names)
    for g, nets in sorted(res.group_networks.items()):
        for kind, m in sorted(nets.items()):
            p = out / f"network_group{g}_{kind}.csv"
            write_matrix_csv(p, m, header=names, row_labels=names)
            written.append(p)
    return written
