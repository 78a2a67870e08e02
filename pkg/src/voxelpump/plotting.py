"""Telemetry figures: one panel per pump, rendered to a file.

The report path is file-to-file: read a telemetry CSV, write an image plus a
sidecar CSV holding exactly the plotted points, so downstream checks can
work from the emitted data instead of scraping pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DomainError  # noqa: E402

TELEMETRY_HEADER = "t_s,pump_id,commanded_ml,position_steps,voxel_pa"


class TelemetryFormatError(DomainError):
    """Telemetry CSV does not match the expected schema."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__("%s:%d: %s" % (path, line, message))


@dataclass
class PumpSeries:
    pump_id: int
    t: np.ndarray
    commanded_ml: np.ndarray
    position_steps: np.ndarray
    voxel_pa: np.ndarray  # NaN where the backend had no pressure


def read_telemetry(path: str) -> list[PumpSeries]:
    """Parse a telemetry CSV into per-pump series, ordered by pump id.

    Lines starting with '#' (the waveform description header) are skipped.
    """
    with open(path, "r", newline="") as fh:
        lines = fh.read().splitlines()
    header_at = 0
    while header_at < len(lines) and lines[header_at].startswith("#"):
        header_at += 1
    if header_at >= len(lines):
        raise TelemetryFormatError(path, max(1, len(lines)), "expected header %r" % TELEMETRY_HEADER)
    if lines[header_at].strip() != TELEMETRY_HEADER:
        raise TelemetryFormatError(
            path, header_at + 1, "bad header %r, expected %r" % (lines[header_at], TELEMETRY_HEADER)
        )

    by_pump: dict[int, list[tuple[float, float, int, float]]] = {}
    for lineno, raw in enumerate(lines[header_at + 1 :], start=header_at + 2):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split(",")
        if len(parts) != 5:
            raise TelemetryFormatError(path, lineno, "expected 5 fields, got %d" % len(parts))
        try:
            t = float(parts[0])
            pump_id = int(parts[1])
            commanded = float(parts[2])
            position = int(parts[3])
            voxel = float(parts[4]) if parts[4].strip() else float("nan")
        except ValueError as exc:
            raise TelemetryFormatError(path, lineno, "bad field: %s" % exc) from exc
        by_pump.setdefault(pump_id, []).append((t, commanded, position, voxel))

    if not by_pump:
        raise TelemetryFormatError(path, len(lines), "no data rows after the header")

    series = []
    for pump_id in sorted(by_pump):
        rows = by_pump[pump_id]
        series.append(
            PumpSeries(
                pump_id=pump_id,
                t=np.array([r[0] for r in rows]),
                commanded_ml=np.array([r[1] for r in rows]),
                position_steps=np.array([r[2] for r in rows], dtype=np.int64),
                voxel_pa=np.array([r[3] for r in rows]),
            )
        )
    return series


def plot_telemetry(series: list[PumpSeries]):
    """Build the figure: per pump, commanded volume plus voxel pressure."""
    n = len(series)
    fig, axes = plt.subplots(n, 1, figsize=(8.0, 2.4 * n), sharex=True, squeeze=False)
    for ax, s in zip(axes[:, 0], series):
        ax.plot(s.t, s.commanded_ml, color="tab:blue", lw=1.2, label="commanded mL")
        ax.set_ylabel("pump %d\nmL" % s.pump_id)
        if np.any(np.isfinite(s.voxel_pa)):
            twin = ax.twinx()
            twin.plot(s.t, s.voxel_pa / 1000.0, color="tab:red", lw=1.0, label="voxel kPa")
            twin.set_ylabel("kPa")
        ax.grid(True, alpha=0.3)
    axes[-1, 0].set_xlabel("t (s)")
    fig.tight_layout()
    return fig


def write_plot_data(series: list[PumpSeries], path: str) -> None:
    """Sidecar CSV of the plotted points (the delimited half of the report)."""
    with open(path, "w", newline="") as fh:
        fh.write("pump_id,t_s,commanded_ml,voxel_pa\n")
        for s in series:
            for i in range(len(s.t)):
                voxel = "" if not np.isfinite(s.voxel_pa[i]) else repr(float(s.voxel_pa[i]))
                fh.write("%d,%r,%r,%s\n" % (s.pump_id, float(s.t[i]), float(s.commanded_ml[i]), voxel))


def render_report(csv_path: str, out_path: str) -> tuple[str, str]:
    """Read telemetry, write the figure and its sidecar; returns both paths."""
    series = read_telemetry(csv_path)
    fig = plot_telemetry(series)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    stem, dot, _ext = out_path.rpartition(".")
    data_path = (stem if dot else out_path) + "_data.csv"
    write_plot_data(series, data_path)
    return out_path, data_path
