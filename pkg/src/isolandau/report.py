"""Render figures from a run directory's diagnostics.csv."""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import IsolandauError


def _load_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name, val in row.items():
                cols[name].append(float(val))
    return cols


def render_report(outdir):
    """Write conserved.png, entropy.png, dissipation.png, audits.png next to
    diagnostics.csv.  Returns the list of figure paths."""
    csv_path = os.path.join(outdir, "diagnostics.csv")
    if not os.path.exists(csv_path):
        raise IsolandauError(f"{outdir}: no diagnostics.csv to report on")
    cols = _load_csv(csv_path)
    t = cols["t"]
    paths = []

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(t, cols["mass"], "o-")
    axes[0].set_ylabel("mass")
    axes[1].plot(t, cols["second_moment"], "o-")
    axes[1].set_ylabel("second moment")
    for ax in axes:
        ax.set_xlabel("t")
    fig.tight_layout()
    paths.append(_save(fig, outdir, "conserved.png"))

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(t, cols["entropy"], "o-", label="weighted")
    ax.plot(t, cols["entropy_plain"], "s--", label="plain")
    ax.set_xlabel("t")
    ax.set_ylabel("entropy")
    ax.legend()
    fig.tight_layout()
    paths.append(_save(fig, outdir, "entropy.png"))

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(t, cols["dissipation"], "o-", label="dissipation")
    ax.plot(t, cols["fisher_weighted"], "s--", label="weighted Fisher")
    ax.set_xlabel("t")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    paths.append(_save(fig, outdir, "dissipation.png"))

    fig, ax = plt.subplots(figsize=(6.5, 4))
    for name, series in cols.items():
        if name.startswith("slack_"):
            ax.plot(t, series, "o-", label=name[len("slack_"):], ms=3)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("audit slack")
    ax.set_yscale("symlog", linthresh=1e-10)
    ax.legend(fontsize=7)
    fig.tight_layout()
    paths.append(_save(fig, outdir, "audits.png"))
    return paths


def _save(fig, outdir, name):
    path = os.path.join(outdir, name)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
