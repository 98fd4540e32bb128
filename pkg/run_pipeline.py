#!/usr/bin/env python3
"""
Körning av hela Randprognos-kedjan med en konfiguration och ett frö

gen-data -> stats -> train -> forecast (truth och no-future) -> evaluate
(plus persistens- och klimatologibaslinjer) -> report
"""

import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import click

from config import LOG_NIVÅ
from randprognos import cli, konfigurera_loggning

logger = logging.getLogger(__name__)


class PipelineRunner:
    """Kör alla steg i ordning och avbryter vid första fel"""

    def __init__(self, work_dir, config_path: Optional[str] = None, n_ens: Optional[int] = None,
                 n_jobs: int = 1, until_epoch: Optional[int] = None, overwrite: bool = False):
        """
        Args:
            work_dir: katalog för alla filer som kedjan skriver
            config_path: konfigurationsfil, standardvärden om None
            until_epoch: korta av träningen (för snabba prov)
        """
        self.work_dir = Path(work_dir)
        self.config_path = config_path
        self.n_ens = n_ens
        self.n_jobs = n_jobs
        self.until_epoch = until_epoch
        self.overwrite = overwrite
        self.start_time = datetime.now()
        self.success = False
        self.error_message = None
        self.tider = {}

    def fil(self, namn: str) -> str:
        return str(self.work_dir / namn)

    def _konfig(self) -> List[str]:
        return ["--config", self.config_path] if self.config_path else []

    def _skriv_över(self) -> List[str]:
        return ["--overwrite"] if self.overwrite else []

    def _ensemble(self) -> List[str]:
        return ["--n-ens", str(self.n_ens)] if self.n_ens else []

    def steg(self):
        """(namn, argument) för varje steg"""
        data, stats, ckpt = self.fil("dataset.bin"), self.fil("stats.json"), self.fil("model.ckpt")
        träning = ["train", *self._konfig(), "--data", data, "--stats", stats, "--out-checkpoint", ckpt,
                   "--log-csv", self.fil("train_log.csv"), *self._skriv_över()]
        if self.until_epoch:
            träning += ["--until-epoch", str(self.until_epoch)]
        lista = [
            ("gen-data", ["gen-data", *self._konfig(), "--out", data, "--n-jobs", str(self.n_jobs),
                          *self._skriv_över()]),
            ("stats", ["stats", "--data", data, "--out", stats, *self._skriv_över()]),
            ("train", träning),
        ]
        for rand in ("truth", "no-future"):
            prognos = self.fil(f"forecast_{rand}.bin")
            lista.append((f"forecast {rand}", [
                "forecast", "--checkpoint", ckpt, "--data", data, *self._konfig(), "--boundary", rand,
                *self._ensemble(), "--n-jobs", str(self.n_jobs), "--out", prognos, *self._skriv_över()]))
            lista.append((f"evaluate {rand}", [
                "evaluate", "--forecasts", prognos, "--data", data, "--stats", stats, *self._konfig(),
                "--out-csv", self.fil(f"metrics_{rand}.csv"), *self._skriv_över()]))
        for baslinje in ("persistence", "climatology"):
            lista.append((f"evaluate {baslinje}", [
                "evaluate", "--baseline", baslinje, "--data", data, "--stats", stats, *self._konfig(),
                "--out-csv", self.fil(f"metrics_{baslinje}.csv"), *self._skriv_över()]))
        tabeller = [a for r in ("truth", "no-future", "persistence", "climatology")
                    for a in ("--csv", self.fil(f"metrics_{r}.csv"))]
        lista.append(("report", ["report", *tabeller, "--out-dir", self.fil("plots"), *self._skriv_över()]))
        return lista

    def kör_steg(self, namn: str, argument: List[str]):
        logger.info("-" * 60)
        logger.info(f"STEG: {namn}")
        start = datetime.now()
        try:
            cli.main(args=["--log-file", "", *argument], prog_name="randprognos", standalone_mode=False)
        except SystemExit as e:
            if e.code not in (0, None):
                raise RuntimeError(f"steget '{namn}' avslutades med kod {e.code}") from e
        self.tider[namn] = datetime.now() - start
        logger.info(f"Steget '{namn}' tog {self.tider[namn]}")

    def run(self):
        logger.info("=" * 60)
        logger.info("STARTAR RANDPROGNOS-KEDJAN")
        logger.info(f"Tidpunkt: {self.start_time}")
        logger.info(f"Arbetskatalog: {self.work_dir}")
        logger.info("=" * 60)

        self.work_dir.mkdir(parents=True, exist_ok=True)
        try:
            for namn, argument in self.steg():
                self.kör_steg(namn, argument)
            self.success = True
        except Exception as e:
            self.success = False
            self.error_message = str(e)

        slut = datetime.now()
        logg = logger.info if self.success else logger.error
        logg("=" * 60)
        logg("KEDJAN SLUTFÖRD" if self.success else "KEDJAN MISSLYCKADES")
        if self.error_message:
            logg(f"Fel: {self.error_message}")
        logg(f"Varaktighet: {slut - self.start_time}")
        for namn, tid in self.tider.items():
            logg(f"  {namn}: {tid}")
        logg("=" * 60)
        return self.success


@click.command()
@click.option("--work-dir", required=True, type=click.Path(file_okay=False), help="Katalog för alla utdata")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Konfigurationsfil")
@click.option("--n-ens", type=click.IntRange(min=1), default=None,
              help="Ensemblestorlek (standard rollout.n_ens)")
@click.option("--n-jobs", type=int, default=1, show_default=True, help="Parallella jobb")
@click.option("--until-epoch", type=click.IntRange(min=1), default=None, help="Korta av träningen")
@click.option("--overwrite", is_flag=True, help="Skriv över tidigare utdata")
def main(work_dir, config_path, n_ens, n_jobs, until_epoch, overwrite):
    """Huvudfunktion för en hel körning"""
    Path(work_dir).mkdir(parents=True, exist_ok=True)
    konfigurera_loggning(LOG_NIVÅ, str(Path(work_dir) / f"pipeline_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"))
    runner = PipelineRunner(work_dir, config_path, n_ens=n_ens, n_jobs=n_jobs,
                            until_epoch=until_epoch, overwrite=overwrite)
    sys.exit(0 if runner.run() else 1)


if __name__ == "__main__":
    main()
