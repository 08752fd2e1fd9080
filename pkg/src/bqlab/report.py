"""Render the energy ledger of a finished run: JSON + CSV + figures.

Figures are written as PNG next to the delimited output; nothing here is on
the simulation's critical path.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .verify import energy_ledger  # noqa: E402

log = logging.getLogger(__name__)


def _figure(path: Path, draw):
    fig, ax = plt.subplots(figsize=(6.4, 4.0), dpi=130)
    draw(ax)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_report(history: list[dict], out_dir: str | Path) -> dict:
    """Energy ledger + three diagnostic figures for one run history."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ledger = energy_ledger(history)
    (out_dir / "ledger.json").write_text(
        json.dumps(ledger, indent=2, sort_keys=True))

    s = np.array([r["s"] for r in history])

    def semilog(ax, key, label):
        vals = np.array([r[key] for r in history])
        positive = vals > 0.0
        if positive.any():
            ax.semilogy(s[positive], vals[positive], label=label)
        else:
            ax.plot(s, vals, label=label)

    def draw_energy(ax):
        semilog(ax, "E", "E")
        semilog(ax, "X", "X")
        semilog(ax, "eps_hk", "|eps|_Hk")
        if ledger["kappa_hat"] is not None:
            e0 = history[0]["E"]
            ax.semilogy(s, e0 * np.exp(-ledger["kappa_hat"] * (s - s[0])),
                        "k--", lw=0.8,
                        label=f"fit rate {ledger['kappa_hat']:.3g}")
        ax.set_xlabel("s")
        ax.set_title("energy decay")

    def draw_modulation(ax):
        for key in ("lambda", "mu", "l1", "l2"):
            ax.semilogy(s, [max(r[key], 1e-300) for r in history], label=key)
        ax.set_xlabel("s")
        ax.set_title("modulation parameters")

    def draw_constraint(ax):
        semilog(ax, "l12_drift", "|L12(eps)(0)|")
        semilog(ax, "compat_resid", "compatibility")
        ax.plot(s, [r["lam_rate"] for r in history], label="lam_rate")
        ax.set_xlabel("s")
        ax.set_title("constraint and rate diagnostics")

    _figure(out_dir / "energy.png", draw_energy)
    _figure(out_dir / "modulation.png", draw_modulation)
    _figure(out_dir / "constraint.png", draw_constraint)

    with open(out_dir / "ledger.csv", "w") as fh:
        keys = ["s", "dE_ds", "dX_ds"]
        contribs = sorted(ledger["contributions"])
        fh.write(",".join(keys + contribs) + "\n")
        for i in range(len(ledger["s"])):
            vals = [ledger["s"][i], ledger["dE_ds"][i], ledger["dX_ds"][i]]
            vals += [ledger["contributions"][c][i] for c in contribs]
            fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")
    log.info("report written to %s", out_dir)
    return ledger
