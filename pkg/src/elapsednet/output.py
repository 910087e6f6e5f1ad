"""CSV, summary, MANIFEST and gnuplot emission for experiment runs.

Floats are written with 17 significant digits so values round-trip exactly;
repeated runs of the same configuration produce byte-identical files (no
timestamps, no machine state).  Every emitted file is listed in MANIFEST
together with the grid metadata; on solver failure the partial outputs are
flushed and the MANIFEST is marked incomplete.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .renewal import RunRecord


def fmt(value: float) -> str:
    return f"{value:.17g}"


@dataclass
class OutputSink:
    directory: str
    metadata: dict[str, str] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        os.makedirs(self.directory, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def write_text(self, name: str, text: str) -> None:
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.files.append(name)

    def write_csv(self, name: str, header: list[str], rows) -> None:
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(fmt(v) for v in row))
        self.write_text(name, "\n".join(lines) + "\n")

    def write_manifest(self, status: str = "complete", error: str | None = None) -> None:
        lines = ["# elapsednet output manifest", f"status = {status}"]
        if error:
            lines.append(f"error = {error}")
        for key in sorted(self.metadata):
            lines.append(f"{key} = {self.metadata[key]}")
        for name in self.files:
            lines.append(f"file = {name}")
        text = "\n".join(lines) + "\n"
        with open(self.path("MANIFEST"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def series_rows(times: np.ndarray, table: np.ndarray):
    for t, row in zip(times, table):
        yield [t, *row]


def write_record(sink: OutputSink, record: RunRecord) -> None:
    """Emit the standard per-run files for a RunRecord."""
    x_nodes = record.space.nodes
    header = ["t"] + [fmt(x) for x in x_nodes]
    sink.write_csv("N.csv", header, series_rows(record.times, record.N_series))
    sink.write_csv("S.csv", header, series_rows(record.times, record.S_series))
    sink.write_csv("mass.csv", header, series_rows(record.times, record.mass_series))
    sink.write_csv(
        "kernel_stats.csv",
        ["t", "w_mean", "w_sup_deviation"],
        ([t, m, d] for t, m, d in
         zip(record.times, record.w_mean_series, record.w_dev_series)),
    )
    for t in sorted(record.w_snapshots):
        w = record.w_snapshots[t]
        rows = ([x, y, w[i, j]]
                for i, x in enumerate(x_nodes) for j, y in enumerate(x_nodes))
        sink.write_csv(f"w_snapshot_t{fmt(t)}.csv", ["x", "y", "w"], rows)

    _write_heatmap(sink, "N_heatmap", record.times, x_nodes, record.N_series,
                   "activity N(t, x)")
    _write_heatmap(sink, "S_heatmap", record.times, x_nodes, record.S_series,
                   "stimulation S(t, x)")
    _write_deviation_trace(sink, record)
    if record.w_snapshots:
        t_last = max(record.w_snapshots)
        _write_kernel_panel(sink, x_nodes, record.w_snapshots[t_last], t_last)


def _write_heatmap(sink: OutputSink, stem: str, times, x_nodes, table, title: str) -> None:
    lines = []
    for t, row in zip(times, table):
        for x, v in zip(x_nodes, row):
            lines.append(f"{fmt(t)} {fmt(x)} {fmt(v)}")
        lines.append("")
    sink.write_text(f"{stem}.dat", "\n".join(lines) + "\n")
    sink.write_text(
        f"{stem}.gp",
        "set view map\n"
        "set xlabel 't'\n"
        "set ylabel 'x'\n"
        f"set title '{title}'\n"
        f"splot '{stem}.dat' using 1:2:3 with pm3d notitle\n",
    )


def _write_deviation_trace(sink: OutputSink, record: RunRecord) -> None:
    rows = "\n".join(
        f"{fmt(t)} {fmt(d)}" for t, d in zip(record.times, record.w_dev_series)
    )
    sink.write_text("w_deviation.dat", rows + "\n")
    sink.write_text(
        "w_deviation.gp",
        "set xlabel 't'\n"
        "set ylabel '||w - <w>||_inf'\n"
        "set logscale y\n"
        "plot 'w_deviation.dat' using 1:2 with lines notitle\n",
    )


def _write_kernel_panel(sink: OutputSink, x_nodes, w: np.ndarray, t: float) -> None:
    lines = []
    for i, x in enumerate(x_nodes):
        for j, y in enumerate(x_nodes):
            lines.append(f"{fmt(x)} {fmt(y)} {fmt(w[i, j])}")
        lines.append("")
    sink.write_text("kernel_final.dat", "\n".join(lines) + "\n")
    sink.write_text(
        "kernel_final.gp",
        "set view map\n"
        "set xlabel 'x'\n"
        "set ylabel 'y'\n"
        f"set title 'connectivity w(x, y) at t = {fmt(t)}'\n"
        "splot 'kernel_final.dat' using 1:2:3 with pm3d notitle\n",
    )
