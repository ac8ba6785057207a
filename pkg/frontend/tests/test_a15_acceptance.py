"""A15: render a BER waterfall with two labeled threshold verticals and a
transfer chart with intersection markers from upstream CLI outputs, with
byte-identical SVG on re-run.

The upstream artifacts are produced by invoking the `ampcc` CLI, so this
suite touches the primary package only through its external interfaces.
"""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from ampcc_plots.render import PlotSpec, render


def _run_ampcc(args):
    proc = subprocess.run([sys.executable, "-m", "ampcc.cli", *args],
                          capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="module")
def upstream(tmp_path_factory):
    root = tmp_path_factory.mktemp("upstream")
    # BER sweep at rate 2/3 bits/use: the sidecar carries both the Gaussian
    # and the BPSK capacity verticals (A9-style waterfall artifact)
    ber_cfg = root / "ber_cfg.json"
    ber_cfg.write_text(json.dumps({
        "n": 510, "m": 255, "snr_db": 6.0, "constellation": "bpsk",
        "code": {"kind": "repetition", "l": 3}, "channel": {"kind": "awgn"},
        "operator": {"kind": "dense-gaussian"}, "seed": 1, "t_max": 30}))
    _run_ampcc(["ber", "--config", str(ber_cfg), "--snr-db", "1,2.5,4,5.5",
                "--out", str(root / "ber"), "--seed", "3"])
    # transfer analysis in a three-intersection regime (A11-style artifact)
    se_cfg = root / "se_cfg.json"
    se_cfg.write_text(json.dumps({
        "n": 512, "m": 256, "snr_db": 13.5, "constellation": "bpsk",
        "code": {"kind": "uncoded"}, "channel": {"kind": "awgn"},
        "operator": {"kind": "dense-gaussian"}, "seed": 1, "t_max": 30}))
    _run_ampcc(["se", "--config", str(se_cfg), "--out", str(root / "se"),
                "--seed", "3"])
    return root


def test_a15_plot_tool(upstream, tmp_path):
    side = json.loads((upstream / "ber" / "ber_thresholds.json").read_text())
    labels = [t["label"] for t in side["thresholds"]]
    assert len(labels) == 2

    ber_out = tmp_path / "waterfall.svg"
    spec = PlotSpec(kind="ber", inputs=[str(upstream / "ber" / "ber.csv")],
                    out=str(ber_out),
                    sidecar=str(upstream / "ber" / "ber_thresholds.json"))
    render(spec)
    body = ber_out.read_text()
    for label in labels:
        assert any(part in body for part in label.split()), label

    report = json.loads((upstream / "se" / "se_report.json").read_text())
    assert len(report["intersections"]) == 3
    tra_out = tmp_path / "transfer.svg"
    spec2 = PlotSpec(kind="transfer",
                     inputs=[str(upstream / "se" / "transfer.csv")],
                     out=str(tra_out),
                     sidecar=str(upstream / "se" / "se_report.json"))
    render(spec2)
    assert "intersections" in tra_out.read_text()

    rerun1 = tmp_path / "waterfall2.svg"
    render(PlotSpec(kind="ber", inputs=[str(upstream / "ber" / "ber.csv")],
                    out=str(rerun1),
                    sidecar=str(upstream / "ber" / "ber_thresholds.json")))
    rerun2 = tmp_path / "transfer2.svg"
    render(PlotSpec(kind="transfer",
                    inputs=[str(upstream / "se" / "transfer.csv")],
                    out=str(rerun2),
                    sidecar=str(upstream / "se" / "se_report.json")))
    ok = (ber_out.read_bytes() == rerun1.read_bytes()
          and tra_out.read_bytes() == rerun2.read_bytes())
    print("\n[A15] %s  BER waterfall with %d labeled verticals; transfer "
          "chart with %d intersection markers; byte-identical SVG on re-run"
          % ("PASS" if ok else "FAIL", len(labels),
             len(report["intersections"])))
    assert ok
