#!/usr/bin/env python3
"""
SVG-diagram över verifikationsmåtten (ledtid på x-axeln)

Ett diagram per mått med en linje per måtttabell, märkt med filnamn och N_ens.
Utdata är bytestabil: fast hashsalt och inget datum i metadata.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from errors import DataIOError, EmptyInputError
from metrics import AGGREGAT, read_metrics_csv

logger = logging.getLogger(__name__)

MÅTT = ("rmse", "spread", "ssr", "crps")
RUBRIKER = {
    "rmse": "Normaliserad RMSE",
    "spread": "Normaliserad spridning",
    "ssr": "Spridning/skicklighet (SSR)",
    "crps": "Normaliserad CRPS",
}

plt.rcParams["svg.hashsalt"] = "randprognos"
plt.rcParams["svg.fonttype"] = "none"


def _etikett(path: Path, rader: List[Dict]) -> str:
    n_ens = rader[0]["n_ens"] if rader else 0
    return f"{path.stem} (N_ens={n_ens})"


def plot_metrics(csv_paths: Sequence, out_dir, variable: str = AGGREGAT,
                 timestep_hours: float = None, overwrite: bool = False) -> List[Path]:
    """Ritar ett SVG-diagram per mått

    Args:
        csv_paths: måtttabeller från evaluate
        out_dir: katalog för diagrammen
        variable: variabel att rita, standard det normaliserade medlet
        timestep_hours: om satt visas ledtiden i timmar i stället för steg

    Returns:
        Sökvägarna till de skrivna filerna
    """
    if not csv_paths:
        raise EmptyInputError("report kräver minst en måtttabell")
    tabeller = []
    for p in csv_paths:
        p = Path(p)
        rader = [r for r in read_metrics_csv(p) if r["variable"] == variable]
        if not rader:
            raise DataIOError(f"{p} saknar rader för '{variable}'")
        tabeller.append((p, sorted(rader, key=lambda r: r["lead_steps"])))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    skrivna = []
    for mått in MÅTT:
        mål = out_dir / f"{mått}.svg"
        if mål.exists() and not overwrite:
            raise DataIOError(f"{mål} finns redan och skrivs inte över")
        fig, ax = plt.subplots(1, 1, figsize=(6.5, 4.5), constrained_layout=True)
        for p, rader in tabeller:
            punkter = [(r["lead_steps"], r[mått]) for r in rader if r[mått] is not None]
            if not punkter:
                logger.warning(f"{p.name}: inga värden för {mått}")
                continue
            x = [a * timestep_hours if timestep_hours else a for a, _ in punkter]
            ax.plot(x, [b for _, b in punkter], marker="o", ms=3, label=_etikett(p, rader))
        if mått == "ssr":
            ax.axhline(1.0, color="grey", lw=0.8, ls="--")
        ax.set_title(RUBRIKER[mått] if variable == AGGREGAT else f"{mått.upper()} för {variable}")
        ax.set_xlabel("Ledtid (h)" if timestep_hours else "Ledtid (steg)")
        ax.set_ylabel(mått.upper())
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.savefig(mål, format="svg", metadata={"Date": None})
        plt.close(fig)
        logger.info(f"Skrev diagram {mål}")
        skrivna.append(mål)
    return skrivna
