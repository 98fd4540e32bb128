#!/usr/bin/env python3
"""
Verifikation av ensembleprognoser: RMSE, spridning, SSR och CRPS

Alla mått räknas över de inre cellerna. Indata till de enskilda måtten:
    forecasts [S, N_ens, ...celler], truths [S, ...celler]
för en variabel och en ledtid.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DataIOError, DimensionError, EmptyInputError, InsufficientEnsembleError
from grid import GridSpec, NormStats, crop_interior

logger = logging.getLogger(__name__)

CSV_KOLUMNER = ["variable", "lead_steps", "rmse", "spread", "ssr", "crps", "n_samples", "n_ens"]
AGGREGAT = "normalized_mean"


def _kontrollera(forecasts, truths) -> Tuple[np.ndarray, np.ndarray]:
    f = np.asarray(forecasts, dtype=np.float64)
    x = np.asarray(truths, dtype=np.float64)
    if f.ndim < 2 or f.shape[0] == 0:
        raise EmptyInputError(f"inga prognoser (formen {f.shape})")
    if x.shape != f.shape[:1] + f.shape[2:]:
        raise DimensionError(f"prognoserna {f.shape} och sanningen {x.shape} passar inte ihop")
    return f, x


def rmse(forecasts, truths) -> float:
    """√(medel över prov och celler av (ensemblemedel − sanning)²)"""
    f, x = _kontrollera(forecasts, truths)
    return float(np.sqrt(np.mean((f.mean(axis=1) - x) ** 2)))


def spread(forecasts) -> float:
    """√(medel av medlemsvariansen kring ensemblemedlet), divisor N_ens"""
    f = np.asarray(forecasts, dtype=np.float64)
    if f.ndim < 2 or f.shape[0] == 0:
        raise EmptyInputError(f"inga prognoser (formen {f.shape})")
    if f.shape[1] < 2:
        raise InsufficientEnsembleError(f"spridning kräver minst 2 medlemmar, fick {f.shape[1]}")
    return float(np.sqrt(np.mean(f.var(axis=1))))


def ssr(forecasts, truths, bias_correction: bool = True) -> float:
    """√((N+1)/N)·Spread/RMSE; 0 när alla medlemmar är lika, NaN när RMSE = 0 men spridningen inte är det"""
    f, x = _kontrollera(forecasts, truths)
    sp = spread(f)
    if sp == 0.0:
        return 0.0
    fel = rmse(f, x)
    if fel == 0.0:
        logger.warning("SSR är odefinierad: RMSE är 0 men spridningen är positiv")
        return float("nan")
    n = f.shape[1]
    faktor = math.sqrt((n + 1) / n) if bias_correction else 1.0
    return faktor * sp / fel


def crps(forecasts, truths) -> float:
    """Rättvis CRPS via sortering: O(N log N) per cell

    Σ_e Σ_e' |x_e − x_e'| = 2 Σ_i (2i − N − 1)·x_(i) för sorterade medlemmar.
    Med N = 1 försvinner parterm och måttet blir MAE.
    """
    f, x = _kontrollera(forecasts, truths)
    n = f.shape[1]
    absfel = np.abs(f - x[:, None]).mean(axis=1)
    if n == 1:
        return float(absfel.mean())
    sorterade = np.sort(f, axis=1)
    vikter = (2.0 * np.arange(1, n + 1) - n - 1).reshape((1, n) + (1,) * (f.ndim - 2))
    parsumma = 2.0 * (vikter * sorterade).sum(axis=1)
    return float((absfel - parsumma / (2.0 * n * (n - 1))).mean())


def crps_pairwise(forecasts, truths) -> float:
    """Rättvis CRPS med den direkta O(N²)-parsumman"""
    f, x = _kontrollera(forecasts, truths)
    n = f.shape[1]
    absfel = np.abs(f - x[:, None]).sum(axis=1)
    if n == 1:
        return float(absfel.mean())
    parsumma = np.abs(f[:, :, None] - f[:, None, :]).sum(axis=(1, 2))
    return float(((absfel - parsumma / (2.0 * (n - 1))) / n).mean())


@dataclass
class MetricRow:
    variable: str
    lead_steps: int
    rmse: float
    spread: Optional[float]
    ssr: Optional[float]
    crps: float
    n_samples: int
    n_ens: int


@dataclass
class MetricReport:
    """Mått per (variabel, ledtid) i fysikaliska enheter plus normaliserade medel per ledtid"""
    rows: List[MetricRow] = field(default_factory=list)
    aggregate: List[MetricRow] = field(default_factory=list)

    def get(self, variable: str, lead: int) -> MetricRow:
        for rad in self.rows + self.aggregate:
            if rad.variable == variable and rad.lead_steps == lead:
                return rad
        raise KeyError(f"{variable} vid ledtid {lead}")

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        skrivare = csv.writer(buf, lineterminator="\n")
        skrivare.writerow(CSV_KOLUMNER)
        for rad in self.rows + self.aggregate:
            skrivare.writerow([rad.variable, rad.lead_steps, _tal(rad.rmse), _tal(rad.spread),
                               _tal(rad.ssr), _tal(rad.crps), rad.n_samples, rad.n_ens])
        return buf.getvalue()

    def write_csv(self, path, overwrite: bool = False) -> Path:
        path = Path(path)
        if path.exists() and not overwrite:
            raise DataIOError(f"{path} finns redan och skrivs inte över")
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            path.write_text(self.to_csv_text(), encoding="utf-8")
        except OSError as e:
            raise DataIOError(f"kunde inte skriva {path}: {e}") from e
        logger.info(f"Skrev måtttabell {path} ({len(self.rows)} rader)")
        return path


def _tal(v: Optional[float]) -> str:
    if v is None or not math.isfinite(v):
        return ""
    return f"{v:.12g}"


def _eller_ingen(fn, *args) -> Optional[float]:
    try:
        v = fn(*args)
    except InsufficientEnsembleError:
        return None
    return v if math.isfinite(v) else None


def evaluate(forecasts: np.ndarray, truths: np.ndarray, spec: GridSpec, stats: NormStats,
             lead_times: Sequence[int], ssr_bias_correction: bool = True) -> MetricReport:
    """Mått för forecasts [S, N, T, d, H, W] mot truths [S, T, d, H, W]"""
    f = np.asarray(forecasts)
    x = np.asarray(truths)
    if f.ndim != 6 or x.shape != f.shape[:1] + f.shape[2:]:
        raise DimensionError(f"evaluate: prognoserna {f.shape} och sanningen {x.shape} passar inte")
    if f.shape[2] != len(lead_times) or f.shape[3] != spec.num_vars:
        raise DimensionError(f"evaluate: {f.shape[2]} ledtider och {f.shape[3]} variabler i prognosfilen")
    s, n = f.shape[:2]
    rapport = MetricReport()
    for di, namn in enumerate(spec.variables):
        for ti, lead in enumerate(lead_times):
            fi = crop_interior(f[:, :, ti, di], spec)
            xi = crop_interior(x[:, ti, di], spec)
            rapport.rows.append(MetricRow(
                variable=namn, lead_steps=int(lead), rmse=rmse(fi, xi),
                spread=_eller_ingen(spread, fi),
                ssr=_eller_ingen(ssr, fi, xi, ssr_bias_correction) if n >= 2 else None,
                crps=crps(fi, xi), n_samples=s, n_ens=n,
            ))
    rapport.aggregate = aggregate_normalized(rapport, stats)
    return rapport


def aggregate_normalized(report: MetricReport, stats: NormStats) -> List[MetricRow]:
    """Oviktat medel över variabler av måtten på standardiserade data, per ledtid

    RMSE, spridning och CRPS skalar med 1/σ_d vid standardisering och SSR är
    skalinvariant, så de standardiserade måtten fås direkt ur tabellen.
    """
    per_ledtid: Dict[int, List[MetricRow]] = {}
    for rad in report.rows:
        per_ledtid.setdefault(rad.lead_steps, []).append(rad)

    aggregat = []
    for lead in sorted(per_ledtid):
        rader = per_ledtid[lead]
        σ = stats.std[stats.index([r.variable for r in rader])]

        def medel(värden):
            if any(v is None for v in värden):
                return None
            return float(np.mean(värden))

        aggregat.append(MetricRow(
            variable=AGGREGAT, lead_steps=lead,
            rmse=medel([r.rmse / s for r, s in zip(rader, σ)]),
            spread=medel([None if r.spread is None else r.spread / s for r, s in zip(rader, σ)]),
            ssr=medel([r.ssr for r in rader]),
            crps=medel([r.crps / s for r, s in zip(rader, σ)]),
            n_samples=rader[0].n_samples, n_ens=rader[0].n_ens,
        ))
    return aggregat


def read_metrics_csv(path) -> List[Dict]:
    """Läser en måtttabell; tomma fält blir None"""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as f:
            läsare = csv.DictReader(f)
            if läsare.fieldnames != CSV_KOLUMNER:
                raise DataIOError(f"{path} har kolumnerna {läsare.fieldnames}, förväntade {CSV_KOLUMNER}")
            rader = []
            for rad in läsare:
                rader.append({
                    "variable": rad["variable"],
                    "lead_steps": int(rad["lead_steps"]),
                    **{k: (float(rad[k]) if rad[k] != "" else None) for k in ("rmse", "spread", "ssr", "crps")},
                    "n_samples": int(rad["n_samples"]),
                    "n_ens": int(rad["n_ens"]),
                })
            return rader
    except OSError as e:
        raise DataIOError(f"kunde inte läsa {path}: {e}") from e
