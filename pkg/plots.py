"""
SVG figures for regions, Bode data, regeneration spectra and simulation traces.
Figures are built on the object API with the Agg backend and written with a
fixed hash salt and no date so identical inputs give identical files.
"""

import io
import math

import matplotlib

matplotlib.use("Agg")
import numpy as np
from matplotlib.colors import ListedColormap
from matplotlib.figure import Figure

matplotlib.rcParams["svg.hashsalt"] = "rpmap"
matplotlib.rcParams["svg.fonttype"] = "none"

BAND_COLORS = {
    "NP": "#1f77b4",
    "RP": "#ff7f0e",
    "RS": "#d62728",
    "STAB": "#7f7f7f",
}
INTERSECTION_COLOR = "#2ca02c"


def _svg_bytes(fig):
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def _transform(values, log):
    values = np.asarray(values, dtype=float)
    if not log:
        return values
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(values > 0, np.log10(np.where(values > 0, values, 1.0)), np.nan)


def _layer(ax, raster, extent, color, gid, alpha):
    image = ax.imshow(
        np.ma.masked_where(~raster, np.ones(raster.shape)),
        cmap=ListedColormap([color]), vmin=0, vmax=1, alpha=alpha,
        origin="lower", extent=extent, aspect="auto", interpolation="nearest",
    )
    image.set_gid(gid)
    return image


def region_svg(region, config_hash=""):
    """
    Region figure: one layer per band and the intersection for an overall
    region, the raster plus its curve for a single-frequency region.
    """
    grid = region.grid
    box = grid.box
    x = _transform([box.p1_lo, box.p1_hi], box.p1_log)
    y = _transform([box.p2_lo, box.p2_hi], box.p2_log)
    extent = (x[0], x[1], y[0], y[1])

    fig = Figure(figsize=(6.0, 5.0))
    ax = fig.add_subplot()
    layers = getattr(region, "layers", None)
    if layers is not None:
        for band in sorted(layers):
            _layer(ax, layers[band], extent, BAND_COLORS.get(band, "#bcbd22"), f"band-{band}", 0.25)
        _layer(ax, region.raster, extent, INTERSECTION_COLOR, "intersection", 0.8)
        title = f"Overall region ({region.count} cells)"
    else:
        _layer(ax, region.raster, extent, BAND_COLORS.get(region.band, "#bcbd22"),
               f"band-{region.band}", 0.5)
        for i, ring in enumerate(region.curve):
            closed = np.vstack((ring, ring[:1]))
            (line,) = ax.plot(_transform(closed[:, 0], box.p1_log), _transform(closed[:, 1], box.p2_log),
                              color="black", linewidth=0.8)
            line.set_gid(f"curve-{i}")
        freq = region.omega / (2.0 * math.pi) if region.omega else None
        title = f"{region.band} region" + (f" at {freq:.6g} Hz" if freq else "")

    ax.set_xlim(extent[0], extent[1])
    ax.set_ylim(extent[2], extent[3])
    ax.set_xlabel("log10 p1" if box.p1_log else "p1")
    ax.set_ylabel("log10 p2" if box.p2_log else "p2")
    ax.set_title(title)
    if config_hash:
        fig.text(0.01, 0.01, f"config {config_hash[:12]}", fontsize=6)
    return _svg_bytes(fig)


def bode_svg(points, config_hash=""):
    """Magnitude (dB) and unwrapped phase (deg) against frequency in Hz"""
    freq = np.array([p.omega for p in points]) / (2.0 * math.pi)
    mag = 20.0 * np.log10(np.maximum([p.magnitude for p in points], 1e-300))
    phase = np.degrees([p.phase for p in points])

    fig = Figure(figsize=(6.0, 5.0))
    ax_mag, ax_phase = fig.subplots(2, 1, sharex=True)
    ax_mag.semilogx(freq, mag, color="black", linewidth=0.9)
    ax_mag.set_ylabel("Magnitude [dB]")
    ax_phase.semilogx(freq, phase, color="black", linewidth=0.9)
    ax_phase.set_ylabel("Phase [deg]")
    ax_phase.set_xlabel("Frequency [Hz]")
    if config_hash:
        fig.text(0.01, 0.01, f"config {config_hash[:12]}", fontsize=6)
    return _svg_bytes(fig)


def regen_svg(omegas, values, epsilon, config_hash=""):
    freq = np.asarray(omegas) / (2.0 * math.pi)
    fig = Figure(figsize=(6.0, 3.5))
    ax = fig.add_subplot()
    ax.semilogx(freq, values, color="black", linewidth=0.9, label="R")
    ax.axhline(1.0 - epsilon, color=BAND_COLORS["RS"], linestyle="--", linewidth=0.8, label="1 - epsilon")
    ax.set_xlabel("Frequency [Hz]")
    ax.set_ylabel("Regeneration spectrum")
    ax.legend(loc="upper right")
    if config_hash:
        fig.text(0.01, 0.01, f"config {config_hash[:12]}", fontsize=6)
    return _svg_bytes(fig)


def envelope_svg(env, config_hash=""):
    freq = env["omega"] / (2.0 * math.pi)
    fig = Figure(figsize=(6.0, 3.5))
    ax = fig.add_subplot()
    ax.loglog(freq, env["abs_S"], color=BAND_COLORS["NP"], linewidth=0.9, label="|S|")
    ax.loglog(freq, env["abs_T"], color=BAND_COLORS["RS"], linewidth=0.9, label="|T|")
    ax.set_xlabel("Frequency [Hz]")
    ax.legend(loc="lower right")
    if config_hash:
        fig.text(0.01, 0.01, f"config {config_hash[:12]}", fontsize=6)
    return _svg_bytes(fig)


def trace_svg(trace, config_hash=""):
    """Reference/output and tracking error against time"""
    fig = Figure(figsize=(6.0, 5.0))
    ax_track, ax_err = fig.subplots(2, 1, sharex=True)
    ax_track.plot(trace.t, trace.reference, color="#7f7f7f", linewidth=0.8, label="reference")
    ax_track.plot(trace.t, trace.output, color="black", linewidth=0.8, label="output")
    ax_track.legend(loc="upper right")
    ax_err.plot(trace.t, trace.error, color=BAND_COLORS["RS"], linewidth=0.8)
    ax_err.set_ylabel("Error")
    ax_err.set_xlabel("Time [s]")
    if config_hash:
        fig.text(0.01, 0.01, f"config {config_hash[:12]}", fontsize=6)
    return _svg_bytes(fig)
