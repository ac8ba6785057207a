"""Figure rendering: BER waterfalls with threshold verticals, transfer-curve
charts with intersection markers, and potential-function plots.

Output is deterministic: fixed styling, fixed SVG hash salt, no timestamps,
so identical inputs render byte-identical SVG files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .schema import SchemaError, read_sidecar, read_table

plt.rcParams["svg.hashsalt"] = "ampcc-plots"

_KINDS = ("ber", "transfer", "potential")


@dataclass
class PlotSpec:
    kind: str
    inputs: list
    out: str
    fmt: str = "svg"
    sidecar: str = None
    title: str = ""

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SchemaError("unknown figure kind %r" % self.kind)
        if self.fmt not in ("svg", "png"):
            raise SchemaError("format must be svg or png")
        if not self.inputs:
            raise SchemaError("at least one input CSV is required")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        known = {"kind", "inputs", "out", "format", "sidecar", "title"}
        unknown = set(d) - known
        if unknown:
            raise SchemaError("unknown spec keys: %s" % ", ".join(sorted(unknown)))
        return cls(kind=d["kind"], inputs=list(d["inputs"]), out=d["out"],
                   fmt=d.get("format", "svg"), sidecar=d.get("sidecar"),
                   title=d.get("title", ""))


def _new_figure():
    return plt.subplots(figsize=(6.0, 4.2), dpi=120)


def _save(fig, spec):
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format=spec.fmt, metadata={"Date": None}
                if spec.fmt == "svg" else None)
    plt.close(fig)
    return str(out)


def _render_ber(spec):
    fig, ax = _new_figure()
    for path in spec.inputs:
        tab = read_table(path)
        for col in ("snr_db", "ber"):
            if col not in tab:
                raise SchemaError("%s: ber figure needs column %r" % (path, col))
        label = Path(path).parent.name or Path(path).stem
        ax.semilogy(tab["snr_db"], [max(b, 1e-12) for b in tab["ber"]],
                    marker="o", label=label)
        if "wilson_lo" in tab and "wilson_hi" in tab:
            lo = [max(x, 1e-12) for x in tab["wilson_lo"]]
            hi = [max(x, 1e-12) for x in tab["wilson_hi"]]
            ax.fill_between(tab["snr_db"], lo, hi, alpha=0.2, linewidth=0)
    if spec.sidecar:
        side = read_sidecar(spec.sidecar)
        for thr in side.get("thresholds", []):
            ax.axvline(thr["snr_db"], linestyle="--", color="k", linewidth=1)
            ax.text(thr["snr_db"], 0.5, " " + thr["label"], rotation=90,
                    va="top", ha="right", fontsize=8,
                    transform=ax.get_xaxis_transform())
    ax.set_xlabel("snr_db")
    ax.set_ylabel("BER")
    ax.grid(True, which="both", alpha=0.3)
    if len(spec.inputs) > 1:
        ax.legend(fontsize=8)
    if spec.title:
        ax.set_title(spec.title)
    return _save(fig, spec)


def _render_transfer(spec):
    fig, ax = _new_figure()
    for path in spec.inputs:
        tab = read_table(path)
        for col in ("rho", "psi", "phi_inv"):
            if col not in tab:
                raise SchemaError("%s: transfer figure needs column %r"
                                  % (path, col))
        ax.plot(tab["rho"], tab["phi_inv"], label="phi^-1", color="C0")
        ax.plot(tab["rho"], tab["psi"], label="psi", color="C1")
    if spec.sidecar:
        side = read_sidecar(spec.sidecar)
        pts = side.get("intersections", [])
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], "k*",
                    markersize=10, label="intersections", zorder=5)
    ax.set_xlabel("rho")
    ax.set_ylabel("v")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    if spec.title:
        ax.set_title(spec.title)
    return _save(fig, spec)


def _render_potential(spec):
    fig, ax = _new_figure()
    for path in spec.inputs:
        tab = read_table(path)
        for col in ("v", "u"):
            if col not in tab:
                raise SchemaError("%s: potential figure needs column %r"
                                  % (path, col))
        ax.plot(tab["v"], tab["u"], color="C2")
    if spec.sidecar:
        side = read_sidecar(spec.sidecar)
        if "potential_minimizer_v" in side:
            ax.axvline(side["potential_minimizer_v"], linestyle=":",
                       color="k", linewidth=1)
    ax.set_xlabel("v")
    ax.set_ylabel("U(v)")
    ax.grid(True, alpha=0.3)
    if spec.title:
        ax.set_title(spec.title)
    return _save(fig, spec)


def render(spec):
    """Render one figure; returns the output path. Inputs are validated
    before any file is written."""
    if spec.kind == "ber":
        return _render_ber(spec)
    if spec.kind == "transfer":
        return _render_transfer(spec)
    return _render_potential(spec)
