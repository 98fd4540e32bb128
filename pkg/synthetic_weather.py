#!/usr/bin/env python3
"""
Syntetisk toyatmosfär

Slutna lösningar: gaussiska blobbar som advekteras av en stelkroppsrotation
(u, v) = ω·(−(y − y_c), x − x_c), breddas av diffusion och får ett additivt
dygnsvarierande tillskott. Randvärdena är kända exakt vid varje tid och spelar
rollen av en perfekt global modell.

Koordinater: x = kolumnindex, y = radindex, rotationscentrum ((W−1)/2, (H−1)/2).
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import train_test_split

from config import DRIVNINGSNAMN, STATISKA_NAMN
from dataset_io import read_container, write_container
from errors import ConfigError, DataIOError, DomainError, EmptyInputError
from grid import (
    ForcingFrame,
    GridSpec,
    NormStats,
    StaticFields,
    WeatherState,
    compute_norm_stats,
)
from rng import DATA, substream

logger = logging.getLogger(__name__)

DATASET_KIND = "dataset"


@dataclass(frozen=True)
class Blob:
    """En gaussisk blobb vid t = 0"""
    x: float
    y: float
    width: float
    amplitude: float


@dataclass(frozen=True)
class ToyWorldConfig:
    """Parametrar för en trajektoria i toyvärlden"""
    spec: GridSpec
    rotation_rate: float
    diffusion: float
    diurnal_amplitude: float
    diurnal_period: int
    annual_period: int
    blobs: Tuple[Blob, ...]
    phase_offset: int = 0
    noise_std: float = 0.01
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blobs", tuple(self.blobs))
        if self.diffusion < 0:
            raise ConfigError(f"diffusionen måste vara icke-negativ, fick {self.diffusion}")
        if self.diurnal_period < 2 or self.annual_period < 2:
            raise ConfigError("perioderna måste vara minst 2 steg")
        if self.noise_std < 0:
            raise ConfigError(f"brusnivån måste vara icke-negativ, fick {self.noise_std}")
        for blob in self.blobs:
            if not blob.width > 0:
                raise ConfigError(f"blobbredden måste vara positiv, fick {blob.width}")

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.spec.width - 1) / 2.0, (self.spec.height - 1) / 2.0)

    def to_dict(self) -> Dict:
        d = asdict(self)
        d.pop("spec")
        d["blobs"] = [asdict(b) for b in self.blobs]
        return d

    @classmethod
    def from_dict(cls, d: Dict, spec: GridSpec) -> "ToyWorldConfig":
        d = dict(d)
        d["blobs"] = tuple(Blob(**b) for b in d["blobs"])
        return cls(spec=spec, **d)


def draw_toy_config(cfg, spec: GridSpec, seed: int, index: int) -> ToyWorldConfig:
    """Drar blobbar och fasförskjutning för trajektoria nr index ur strömmen (seed, DATA, index, 0)"""
    rng = substream(seed, DATA, index, 0)
    xc, yc = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
    maxradie = 0.35 * min(spec.width, spec.height)
    blobbar = []
    for _ in range(cfg["toy.n_blobs"]):
        radie = maxradie * math.sqrt(rng.uniform(0.05, 1.0))
        vinkel = rng.uniform(0.0, 2.0 * math.pi)
        tecken = 1.0 if rng.uniform() < 0.7 else -1.0
        blobbar.append(Blob(
            x=xc + radie * math.cos(vinkel),
            y=yc + radie * math.sin(vinkel),
            width=rng.uniform(cfg["toy.blob_width_min"], cfg["toy.blob_width_max"]),
            amplitude=tecken * rng.uniform(cfg["toy.blob_amplitude_min"], cfg["toy.blob_amplitude_max"]),
        ))
    return ToyWorldConfig(
        spec=spec,
        rotation_rate=cfg["toy.rotation_rate"],
        diffusion=cfg["toy.diffusion"],
        diurnal_amplitude=cfg["toy.diurnal_amplitude"],
        diurnal_period=cfg["toy.diurnal_period"],
        annual_period=cfg["toy.annual_period"],
        blobs=tuple(blobbar),
        phase_offset=int(rng.integers(0, cfg["toy.annual_period"])),
        noise_std=cfg["toy.noise_std"],
        seed=int(seed),
        index=int(index),
    )


def analytic_field(config: ToyWorldConfig, x, y, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exakt (θ, u, v) i punkterna (x, y) vid tiden t"""
    if t < 0:
        raise DomainError(f"analytic_field är definierad för t ≥ 0, fick {t}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = config.center
    ω = config.rotation_rate
    κ = config.diffusion

    cos_v, sin_v = math.cos(ω * t), math.sin(ω * t)
    theta = np.zeros(np.broadcast(x, y).shape)
    for blob in config.blobs:
        dx0, dy0 = blob.x - xc, blob.y - yc
        bx = xc + dx0 * cos_v - dy0 * sin_v
        by = yc + dx0 * sin_v + dy0 * cos_v
        varians = blob.width ** 2 + 2.0 * κ * t
        theta = theta + blob.amplitude * (blob.width ** 2 / varians) * np.exp(
            -((x - bx) ** 2 + (y - by) ** 2) / (2.0 * varians)
        )
    τ = t + config.phase_offset
    theta = theta + config.diurnal_amplitude * math.sin(2.0 * math.pi * τ / config.diurnal_period)

    u = np.broadcast_to(-ω * (y - yc), theta.shape).copy()
    v = np.broadcast_to(ω * (x - xc), theta.shape).copy()
    return theta, u, v


def forcing_frame(config: ToyWorldConfig, t: int, names: Sequence[str] = DRIVNINGSNAMN) -> ForcingFrame:
    """Drivning vid tid t (även före start och efter slut, den är känd överallt)"""
    τ = t + config.phase_offset
    dygn = 2.0 * math.pi * τ / config.diurnal_period
    år = 2.0 * math.pi * τ / config.annual_period
    skalärer = {
        "sin_dygn": math.sin(dygn),
        "cos_dygn": math.cos(dygn),
        "sin_arstid": math.sin(år),
        "cos_arstid": math.cos(år),
        "stralning": max(0.0, math.sin(dygn)),
    }
    saknas = [n for n in names if n not in skalärer]
    if saknas:
        raise ConfigError(f"okända drivningsfält: {saknas}")
    hw = (config.spec.height, config.spec.width)
    return ForcingFrame(values=np.stack([np.full(hw, skalärer[n]) for n in names]), names=tuple(names))


def topography(spec: GridSpec) -> np.ndarray:
    """Slät topografianalog i [0, 1]"""
    rader, kolumner = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
    fält = np.sin(2.0 * math.pi * kolumner / spec.width) * np.cos(math.pi * rader / spec.height)
    return 0.5 + 0.5 * fält


def static_fields(spec: GridSpec, names: Sequence[str] = STATISKA_NAMN) -> StaticFields:
    return StaticFields.build(spec, topography(spec), names).validate(spec)


def _brusskala(rent: np.ndarray) -> np.ndarray:
    """Nominell skala per variabel (spridningen vid t = 0) så att bruset blir i standardiserade enheter"""
    skala = rent.reshape(rent.shape[0], -1).std(axis=1)
    return np.where(skala > 0, skala, 1.0)


@dataclass
class Trajectory:
    """Tillstånd t = 0..T−1 med matchande drivning och statiska fält"""
    config: ToyWorldConfig
    states: np.ndarray
    statics: StaticFields

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]

    def state(self, t: int) -> WeatherState:
        return WeatherState(self.states[t], lead_time=t)

    def forcing(self, t: int) -> ForcingFrame:
        return forcing_frame(self.config, t)


def generate_trajectory(config: ToyWorldConfig, n_steps: int) -> Trajectory:
    """Samplar det analytiska fältet i cellcentrum och lägger på seedat observationsbrus"""
    spec = config.spec
    y, x = np.meshgrid(np.arange(spec.height, dtype=np.float64),
                       np.arange(spec.width, dtype=np.float64), indexing="ij")
    states = np.empty((n_steps,) + spec.shape)
    for t in range(n_steps):
        states[t] = np.stack(analytic_field(config, x, y, float(t)))

    if config.noise_std > 0:
        rng = substream(config.seed, DATA, config.index, 1)
        skala = _brusskala(states[0])
        states = states + config.noise_std * skala[None, :, None, None] * rng.standard_normal(states.shape)

    return Trajectory(config=config, states=states, statics=static_fields(spec))


def split_trajectories(n_trajectories: int, split_val: float, split_test: float) -> Dict[str, List[int]]:
    """Sammanhängande index för träning/validering/test (ingen blandning)"""
    index = np.arange(n_trajectories)
    try:
        rest, test = train_test_split(index, test_size=split_test, shuffle=False)
        train, val = train_test_split(rest, test_size=split_val / (1.0 - split_test), shuffle=False)
    except ValueError as e:
        raise ConfigError(f"kan inte dela {n_trajectories} trajektorier: {e}") from e
    return {"train": [int(train[0]), int(train[-1]) + 1],
            "val": [int(val[0]), int(val[-1]) + 1],
            "test": [int(test[0]), int(test[-1]) + 1]}


class Dataset:
    """Ett genererat dataset: tillstånd [n, T, d, H, W] plus huvudet som beskriver dem"""

    def __init__(self, header: Dict, states: np.ndarray):
        self.header = header
        self.states = states
        self.spec = GridSpec.from_dict(header["grid"])
        self.configs = [ToyWorldConfig.from_dict(c, self.spec) for c in header["trajectories"]]
        self.statics = static_fields(self.spec, header["static_names"])
        self.forcing_names = tuple(header["forcing_names"])
        if states.shape[:2] != (header["n_trajectories"], header["n_steps"]) or states.shape[2:] != self.spec.shape:
            raise DataIOError(f"datasetets form {states.shape} stämmer inte med huvudet")

    @property
    def n_trajectories(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1]

    @property
    def stats(self) -> Optional[NormStats]:
        s = self.header.get("stats")
        return NormStats.from_dict(s) if s else None

    def split(self, namn: str) -> List[int]:
        if namn == "all":
            return list(range(self.n_trajectories))
        if namn not in self.header["splits"]:
            raise ConfigError(f"okänd datadelning '{namn}'")
        start, stopp = self.header["splits"][namn]
        return list(range(start, stopp))

    def trajectory(self, i: int) -> np.ndarray:
        return np.asarray(self.states[i], dtype=np.float64)

    def state(self, i: int, t: int) -> WeatherState:
        return WeatherState(self.states[i, t], lead_time=t)

    def forcing(self, i: int, t: int) -> ForcingFrame:
        return forcing_frame(self.configs[i], t, self.forcing_names)

    def split_states(self, namn: str) -> np.ndarray:
        idx = self.split(namn)
        return np.asarray(self.states[idx[0]:idx[-1] + 1], dtype=np.float64)

    def save(self, path, overwrite: bool = False):
        return write_container(path, self.header, self.states, DATASET_KIND, overwrite=overwrite)

    @classmethod
    def load(cls, path) -> "Dataset":
        header, states = read_container(path, DATASET_KIND)
        return cls(header, states)


def generate_dataset(cfg, seed: Optional[int] = None, n_jobs: int = 1) -> Dataset:
    """Genererar alla trajektorier (parallellt med joblib) och bygger datasethuvudet

    Trajektoria i använder strömmarna (seed, DATA, i, 0) för blobbar och
    (seed, DATA, i, 1) för brus, så resultatet beror inte på n_jobs.
    """
    seed = cfg["data.seed"] if seed is None else int(seed)
    spec = GridSpec.from_config(cfg)
    n = cfg["data.n_trajectories"]
    n_steps = cfg["data.n_steps"]
    logger.info(f"Genererar {n} trajektorier à {n_steps} steg på {spec.width}×{spec.height} (frö {seed})")

    konfigurationer = [draw_toy_config(cfg, spec, seed, i) for i in range(n)]
    trajektorier = Parallel(n_jobs=n_jobs)(
        delayed(generate_trajectory)(k, n_steps) for k in konfigurationer
    )
    states = np.stack([t.states for t in trajektorier]).astype("<f4")

    delning = split_trajectories(n, cfg["data.split_val"], cfg["data.split_test"])
    start, stopp = delning["train"]
    stats = compute_norm_stats(np.asarray(states[start:stopp], dtype=np.float64), spec.variables)

    header = {
        "grid": spec.to_dict(),
        "variables": list(spec.variables),
        "forcing_names": list(DRIVNINGSNAMN),
        "static_names": list(STATISKA_NAMN),
        "n_trajectories": n,
        "n_steps": n_steps,
        "seed": seed,
        "splits": delning,
        "stats": stats.to_dict(),
        "trajectories": [k.to_dict() for k in konfigurationer],
        "config_hash": cfg.config_hash,
    }
    logger.info(f"Datadelning: {delning}")
    return Dataset(header, states)


def persistence_baseline(initial, lead: int) -> np.ndarray:
    """Upprepar X^0 för ledtiderna 0..lead; form [lead + 1, d, H, W]"""
    x0 = initial.values if isinstance(initial, WeatherState) else np.asarray(initial, dtype=np.float64)
    if x0.size == 0:
        raise EmptyInputError("persistence_baseline: tomt initialtillstånd")
    if lead < 0:
        raise DomainError(f"persistence_baseline: negativ ledtid {lead}")
    return np.repeat(x0[None], lead + 1, axis=0)


def climatology_baseline(training_set) -> np.ndarray:
    """Medel per variabel och cell över alla träningstrajektorier och tider; form [d, H, W]"""
    data = [np.asarray(t, dtype=np.float64) for t in training_set]
    if not data or any(t.size == 0 for t in data):
        raise EmptyInputError("climatology_baseline: tom träningsmängd")
    summa = sum(t.sum(axis=0) for t in data)
    antal = sum(t.shape[0] for t in data)
    return summa / antal
