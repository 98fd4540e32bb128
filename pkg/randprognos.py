#!/usr/bin/env python3
"""
Randprognos - ensembleprognoser för ett begränsat område med en diffusionsmodell

Kommandon som kedjas via filer:
    gen-data -> stats -> train -> forecast -> evaluate -> report

Alla utdata skrivs en gång (skriv över med --overwrite) och bär konfigurationens hash.
"""

import functools
import logging
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

from checkpoint import file_hash, load_checkpoint, save_checkpoint
from config import LOG_FIL, LOG_NIVÅ, RunConfig, dokumentation
from dataset_io import read_container, read_json, write_container, write_json
from denoisers import CondDenoiserNet
from edm import NoiseSchedule, Preconditioner
from errors import ConfigError, DataIOError, IncompatibleCheckpointError, RandprognosError
from grid import GridSpec, NormStats, compute_norm_stats
from metrics import evaluate
from report import plot_metrics
from rollout import BOUNDARY_KINDS, Forecaster, forecast_split
from synthetic_weather import Dataset, climatology_baseline, generate_dataset, persistence_baseline
from training import AdamState, LossWeights, TrainConfig, TrainingData, train

logger = logging.getLogger(__name__)

FORECAST_KIND = "forecast"
BASELINES = ("persistence", "climatology")


def felhantering(fn):
    """Skriver fel som ERROR:<KOD>: meddelande på stderr och avslutar med felklassens exitkod"""
    @functools.wraps(fn)
    def omslag(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RandprognosError as e:
            logger.error(f"{type(e).__name__}: {e}")
            click.echo(f"ERROR:{e.kod}: {e}", err=True)
            sys.exit(e.exitkod)
        except OSError as e:
            logger.error(f"IO-fel: {e}")
            click.echo(f"ERROR:IO: {e}", err=True)
            sys.exit(3)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except Exception as e:
            logger.exception("Oväntat fel")
            click.echo(f"ERROR:INTERNAL: {type(e).__name__}: {e}", err=True)
            sys.exit(1)
    return omslag


def konfigurera_loggning(nivå: str, loggfil: Optional[str]):
    handlers = [logging.StreamHandler()]
    if loggfil:
        handlers.insert(0, logging.FileHandler(loggfil))
    logging.basicConfig(
        level=getattr(logging, nivå.upper()),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


def ladda_konfiguration(sökväg: Optional[str]) -> RunConfig:
    return RunConfig.from_file(sökväg) if sökväg else RunConfig()


def läs_stats(sökväg: Optional[str], dataset: Dataset) -> NormStats:
    """Statistik ur en stats-fil, annars den som står i datasetets huvud"""
    if sökväg:
        innehåll = read_json(sökväg)
        if "stats" not in innehåll:
            raise DataIOError(f"{sökväg} saknar fältet 'stats'")
        return NormStats.from_dict(innehåll["stats"])
    if dataset.stats is None:
        raise DataIOError("datasetet saknar normaliseringsstatistik; ange --stats")
    return dataset.stats


def kontrollera_utfil(sökväg, overwrite: bool):
    if Path(sökväg).exists() and not overwrite:
        raise DataIOError(f"{sökväg} finns redan och skrivs inte över (använd --overwrite)")


@click.group()
@click.option("--log-level", default=LOG_NIVÅ, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              help="Loggnivå")
@click.option("--log-file", default=LOG_FIL, show_default=True, metavar="PATH",
              help="Loggfil (tom sträng stänger av filloggning)")
def cli(log_level, log_file):
    """Ensembleprognoser med diffusionsmodell för ett begränsat område"""
    konfigurera_loggning(log_level, log_file)


@cli.command("show-config")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Konfigurationsfil att visa i kanonisk form")
@felhantering
def show_config(config_path):
    """Visar alla nycklar med standardvärden, eller en konfiguration i kanonisk form"""
    if config_path:
        cfg = RunConfig.from_file(config_path)
        click.echo(cfg.canonical_text(), nl=False)
        click.echo(f"# config_hash = {cfg.config_hash}")
    else:
        for rad in dokumentation():
            click.echo(rad)


@cli.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Konfigurationsfil (key = value)")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Datasetfil att skriva")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Huvudfrö (standard data.seed)")
@click.option("--n-jobs", type=int, default=1, show_default=True, help="Parallella trajektorier")
@click.option("--overwrite", is_flag=True, help="Skriv över befintlig fil")
@felhantering
def gen_data(config_path, out, seed, n_jobs, overwrite):
    """Genererar ett syntetiskt väderdataset"""
    cfg = ladda_konfiguration(config_path)
    kontrollera_utfil(out, overwrite)
    dataset = generate_dataset(cfg, seed=seed, n_jobs=n_jobs)
    dataset.save(out, overwrite=overwrite)


@cli.command("stats")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="Datasetfil")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="JSON-fil att skriva")
@click.option("--overwrite", is_flag=True, help="Skriv över befintlig fil")
@felhantering
def stats_cmd(data, out, overwrite):
    """Beräknar normaliseringsstatistik på träningsdelen"""
    dataset = Dataset.load(data)
    stats = compute_norm_stats(dataset.split_states("train"), dataset.spec.variables)
    write_json(out, {
        "stats": stats.to_dict(),
        "dataset_hash": file_hash(data),
        "config_hash": dataset.header.get("config_hash"),
    }, overwrite=overwrite)
    for i, namn in enumerate(stats.variables):
        logger.info(f"{namn}: medel {stats.mean[i]:.4g}, std {stats.std[i]:.4g}, residual-std {stats.res_std[i]:.4g}")


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Konfigurationsfil (key = value)")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="Datasetfil")
@click.option("--stats", "stats_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Statistikfil (standard: datasetets huvud)")
@click.option("--out-checkpoint", required=True, type=click.Path(dir_okay=False), help="Checkpoint att skriva")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Fortsätt från denna checkpoint")
@click.option("--log-csv", type=click.Path(dir_okay=False), default=None, help="CSV-logg per epok")
@click.option("--until-epoch", type=click.IntRange(min=1), default=None,
              help="Stoppa efter denna epok (standard: hela trappan)")
@click.option("--save-every", type=click.IntRange(min=0), default=0, show_default=True,
              help="Spara checkpoint var N:e epok (0 = bara i slutet)")
@click.option("--overwrite", is_flag=True, help="Skriv över befintlig checkpoint")
@felhantering
def train_cmd(config_path, data, stats_path, out_checkpoint, resume, log_csv, until_epoch, save_every, overwrite):
    """Tränar den konditionerade brusreduceraren"""
    cfg = ladda_konfiguration(config_path)
    if not (resume and Path(resume).resolve() == Path(out_checkpoint).resolve()):
        kontrollera_utfil(out_checkpoint, overwrite)
    dataset = Dataset.load(data)
    stats = läs_stats(stats_path, dataset)
    spec = dataset.spec
    tcfg = TrainConfig.from_config(cfg)

    net = CondDenoiserNet.from_config(cfg, spec, len(dataset.forcing_names), len(dataset.statics.names))
    state, start_epok, historik = None, 0, []
    if resume:
        ck = load_checkpoint(resume, expected_architecture=net.architecture)
        if ck.config_hash != cfg.config_hash:
            raise IncompatibleCheckpointError(
                f"checkpointen {resume} tränades med konfigurationen {ck.config_hash}, nu {cfg.config_hash}"
            )
        net = ck.net
        state = AdamState(step=ck.step, m=ck.m, v=ck.v)
        start_epok = int(ck.progress.get("epoch", 0))
        historik = list(ck.progress.get("history", []))
        logger.info(f"Återupptar efter epok {start_epok} (steg {ck.step})")

    schema = NoiseSchedule.from_config(cfg, training=True)
    pre = Preconditioner(cfg["schedule.sigma_data"])
    vikter = LossWeights.build(spec, stats, tcfg.lambda_mode)
    träning = TrainingData(dataset, "train", stats)
    validering = TrainingData(dataset, "val", stats) if dataset.split("val") else None

    def spara(epok, tillstånd, hist):
        save_checkpoint(out_checkpoint, net, tillstånd.step, tillstånd.m, tillstånd.v,
                        progress={"epoch": epok, "history": hist, "config": cfg.to_dict()},
                        stats=stats, config_hash=cfg.config_hash, overwrite=True)

    def vid_epokslut(epok, tillstånd, hist):
        if save_every and epok % save_every == 0:
            spara(epok, tillstånd, hist)

    state, historik = train(net, träning, validering, tcfg, schema, pre, vikter, state=state,
                            start_epoch=start_epok, history=historik, log_csv=log_csv,
                            end_epoch=until_epoch, on_epoch_end=vid_epokslut)
    slut = historik[-1]["epoch"] if historik else start_epok
    spara(slut, state, historik)


@cli.command("forecast")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Tränad checkpoint")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="Datasetfil")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Konfiguration (standard: den som sparats i checkpointen)")
@click.option("--split", default="test", show_default=True, type=click.Choice(["train", "val", "test", "all"]),
              help="Datadelning att prognosticera")
@click.option("--n-ens", type=click.IntRange(min=1), default=None, help="Ensemblestorlek (standard rollout.n_ens)")
@click.option("--steps", type=click.IntRange(min=1), default=None, help="Autoregressiva steg (standard rollout.steps)")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Huvudfrö (standard rollout.seed)")
@click.option("--boundary", default="truth", show_default=True, type=click.Choice(BOUNDARY_KINDS),
              help="Randleverantör")
@click.option("--init", "init_index", type=click.IntRange(min=1), default=1, show_default=True,
              help="Dataindex för initialtillståndet X^0")
@click.option("--n-jobs", type=int, default=None, help="Parallella medlemmar (standard rollout.n_jobs)")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Prognosfil att skriva")
@click.option("--overwrite", is_flag=True, help="Skriv över befintlig fil")
@felhantering
def forecast_cmd(checkpoint_path, data, config_path, split, n_ens, steps, seed, boundary, init_index,
                 n_jobs, out, overwrite):
    """Kör en ensembleprognos för alla trajektorier i en datadelning"""
    kontrollera_utfil(out, overwrite)
    ck = load_checkpoint(checkpoint_path)
    if config_path:
        cfg = RunConfig.from_file(config_path)
    else:
        cfg = RunConfig(ck.progress.get("config"))
    dataset = Dataset.load(data)
    stats = ck.stats if ck.stats is not None else läs_stats(None, dataset)
    n_ens = cfg["rollout.n_ens"] if n_ens is None else n_ens
    steps = cfg["rollout.steps"] if steps is None else steps
    seed = cfg["rollout.seed"] if seed is None else seed
    n_jobs = cfg["rollout.n_jobs"] if n_jobs is None else n_jobs

    schema = NoiseSchedule.from_config(cfg)
    forecaster = Forecaster(ck.net, stats, dataset.spec, schema, Preconditioner(cfg["schedule.sigma_data"]),
                            dataset.statics)
    trajektorier = dataset.split(split)
    if not trajektorier:
        raise ConfigError(f"datadelningen '{split}' är tom")
    medlemmar, nycklar = forecast_split(forecaster, dataset, trajektorier, init_index, steps, n_ens,
                                        seed, boundary, n_jobs)
    header = {
        "grid": dataset.spec.to_dict(),
        "variables": list(dataset.spec.variables),
        "split": split,
        "trajectories": trajektorier,
        "init_index": init_index,
        "lead_times": list(range(1, steps + 1)),
        "n_ens": n_ens,
        "seed": seed,
        "member_seeds": nycklar,
        "schedule": schema.to_dict(),
        "boundary": boundary,
        "checkpoint_hash": ck.file_hash,
        "dataset_hash": file_hash(data),
        "config_hash": cfg.config_hash,
    }
    write_container(out, header, medlemmar, FORECAST_KIND, overwrite=overwrite)


def _sanning(dataset: Dataset, trajektorier, init_index: int, lead_times) -> np.ndarray:
    """Sanna tillstånd [S, T, d, H, W] för ledtiderna"""
    index = [init_index + t for t in lead_times]
    if index and index[-1] >= dataset.n_steps:
        raise DataIOError(f"datasetet har {dataset.n_steps} tillstånd, ledtiderna kräver index {index[-1]}")
    return np.stack([dataset.trajectory(i)[index] for i in trajektorier])


def _baslinje(namn: str, dataset: Dataset, trajektorier, init_index: int, lead_times) -> np.ndarray:
    """Baslinjeprognos som en enmedlemsensemble [S, 1, T, d, H, W]"""
    if namn == "persistence":
        rader = [persistence_baseline(dataset.state(i, init_index), max(lead_times))[lead_times]
                 for i in trajektorier]
    else:
        klimat = climatology_baseline(dataset.split_states("train"))
        rader = [np.repeat(klimat[None], len(lead_times), axis=0) for _ in trajektorier]
    return np.stack(rader)[:, None]


@cli.command("evaluate")
@click.option("--forecasts", type=click.Path(exists=True, dir_okay=False), default=None, help="Prognosfil")
@click.option("--baseline", type=click.Choice(BASELINES), default=None,
              help="Utvärdera en baslinje i stället för en prognosfil")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="Datasetfil")
@click.option("--stats", "stats_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Statistikfil (standard: datasetets huvud)")
@click.option("--split", default="test", show_default=True, type=click.Choice(["train", "val", "test", "all"]),
              help="Datadelning för baslinjen")
@click.option("--init", "init_index", type=click.IntRange(min=0), default=1, show_default=True,
              help="Initialindex för baslinjen")
@click.option("--steps", type=click.IntRange(min=1), default=None, help="Ledtider för baslinjen")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Konfiguration (metrics.ssr_bias_correction, rollout.steps)")
@click.option("--out-csv", required=True, type=click.Path(dir_okay=False), help="Måtttabell att skriva")
@click.option("--overwrite", is_flag=True, help="Skriv över befintlig fil")
@felhantering
def evaluate_cmd(forecasts, baseline, data, stats_path, split, init_index, steps, config_path, out_csv, overwrite):
    """Beräknar RMSE, spridning, SSR och CRPS per variabel och ledtid"""
    if (forecasts is None) == (baseline is None):
        raise ConfigError("ange exakt en av --forecasts och --baseline")
    kontrollera_utfil(out_csv, overwrite)
    cfg = ladda_konfiguration(config_path)
    dataset = Dataset.load(data)
    stats = läs_stats(stats_path, dataset)

    if forecasts is not None:
        header, prognoser = read_container(forecasts, FORECAST_KIND)
        if GridSpec.from_dict(header["grid"]) != dataset.spec:
            raise DataIOError(f"{forecasts} har ett annat rutnät än {data}")
        trajektorier = header["trajectories"]
        init_index = header["init_index"]
        lead_times = header["lead_times"]
    else:
        trajektorier = dataset.split(split)
        lead_times = list(range(1, (cfg["rollout.steps"] if steps is None else steps) + 1))
        prognoser = _baslinje(baseline, dataset, trajektorier, init_index, lead_times)
        logger.info(f"Baslinje '{baseline}' för {len(trajektorier)} trajektorier")

    sanning = _sanning(dataset, trajektorier, init_index, lead_times)
    rapport = evaluate(prognoser, sanning, dataset.spec, stats, lead_times,
                       ssr_bias_correction=cfg["metrics.ssr_bias_correction"])
    rapport.write_csv(out_csv, overwrite=overwrite)


@cli.command("report")
@click.option("--csv", "csv_paths", required=True, multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Måtttabeller (kan anges flera gånger)")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False), help="Katalog för SVG-diagrammen")
@click.option("--variable", default="normalized_mean", show_default=True, help="Variabel att rita")
@click.option("--timestep-hours", type=click.FloatRange(min=0, min_open=True), default=None,
              help="Visa ledtid i timmar")
@click.option("--overwrite", is_flag=True, help="Skriv över befintliga diagram")
@felhantering
def report_cmd(csv_paths, out_dir, variable, timestep_hours, overwrite):
    """Ritar ett SVG-diagram per mått med en linje per måtttabell"""
    for sökväg in plot_metrics(list(csv_paths), out_dir, variable=variable,
                               timestep_hours=timestep_hours, overwrite=overwrite):
        click.echo(str(sökväg))


def main():
    """Huvudfunktion"""
    cli()


if __name__ == "__main__":
    main()
