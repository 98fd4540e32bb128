#!/usr/bin/env python3
"""
Autoregressiv ensembleprognos

Varje steg: sätt ihop I^t och B^t (med leverantörens X_B^{t+1}), dra Z_0, lös
med Heun, avkoda residualen till X̂_I^{t+1} och skarva in leverantörens rand.
Medlem m i prov s använder strömmen (seed, ENSEMBLE, s, m, ledtid) i varje steg,
så resultatet beror varken på ensemblestorlek eller parallellism.
"""

import logging
import time
from dataclasses import dataclass
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from denoisers import NetInputs
from edm import NoiseSchedule, Preconditioner, apply_denoiser, heun_sample
from errors import ContractError, MissingBoundaryError, NumericalError, RandprognosError
from grid import (
    BoundaryState,
    ForcingFrame,
    GridSpec,
    NormStats,
    StaticFields,
    WeatherState,
    assemble_conditioning,
    crop_interior,
    residual_decode,
    splice_interior,
    standardize,
    unstandardize,
)
from rng import member_seed, member_stream
from synthetic_weather import forcing_frame

logger = logging.getLogger(__name__)

BOUNDARY_KINDS = ("truth", "no-future")


@dataclass
class Forecaster:
    """Allt som behövs för att stega fram en prognos"""
    denoiser: object
    stats: NormStats
    spec: GridSpec
    schedule: NoiseSchedule
    pre: Preconditioner
    statics: StaticFields

    def denoise_fn(self, inputs: NetInputs) -> Callable[[np.ndarray, float], np.ndarray]:
        def d(x, sigma):
            return apply_denoiser(self.denoiser, x, sigma, inputs, self.pre).data.astype(np.float64)
        return d


class BoundaryProvider:
    """Källa för randvärden och drivning per ledtid (0 = initialtillståndet)"""

    kind = "abstract"
    no_future = False

    def boundary(self, lead: int) -> BoundaryState:
        raise NotImplementedError

    def future_boundary(self, lead: int) -> Optional[BoundaryState]:
        """X_B vid lead som indata till steget som slutar där"""
        return self.boundary(lead)

    def forcing(self, lead: int) -> ForcingFrame:
        raise NotImplementedError


class TruthBoundary(BoundaryProvider):
    """Läser randen ur den syntetiska trajektorien (en perfekt global modell)"""

    kind = "truth"

    def __init__(self, states: np.ndarray, init_index: int, spec: GridSpec,
                 forcing_fn: Callable[[int], ForcingFrame]):
        self.states = np.asarray(states, dtype=np.float64)
        self.init_index = int(init_index)
        self.spec = spec
        self._forcing = forcing_fn
        if not 1 <= self.init_index < self.states.shape[0]:
            raise ContractError(f"initialindex {init_index} kräver ett föregående tillstånd")

    @classmethod
    def from_dataset(cls, dataset, trajectory: int, init_index: int) -> "TruthBoundary":
        drivning = partial(forcing_frame, dataset.configs[trajectory], names=dataset.forcing_names)
        return cls(dataset.trajectory(trajectory), init_index, dataset.spec, drivning)

    def _index(self, lead: int) -> int:
        t = self.init_index + lead
        if not 0 <= t < self.states.shape[0]:
            raise MissingBoundaryError(
                f"randdata saknas för ledtid {lead} (dataindex {t}, {self.states.shape[0]} tillstånd)"
            )
        return t

    def state(self, lead: int) -> WeatherState:
        return WeatherState(self.states[self._index(lead)], lead_time=lead)

    def boundary(self, lead: int) -> BoundaryState:
        return BoundaryState.from_state(self.state(lead), self.spec)

    def forcing(self, lead: int) -> ForcingFrame:
        return self._forcing(self.init_index + lead)


class NoFutureBoundary(TruthBoundary):
    """Som TruthBoundary men utan X_B^{t+1} i indata; persistensen X_B^t används i stället"""

    kind = "no-future"
    no_future = True

    def future_boundary(self, lead: int) -> Optional[BoundaryState]:
        return None


def make_provider(kind: str, dataset, trajectory: int, init_index: int) -> BoundaryProvider:
    if kind == "truth":
        return TruthBoundary.from_dataset(dataset, trajectory, init_index)
    if kind == "no-future":
        return NoFutureBoundary.from_dataset(dataset, trajectory, init_index)
    raise ContractError(f"okänd randleverantör '{kind}', välj bland {BOUNDARY_KINDS}")


def forecast_step(forecaster: Forecaster, x_prev: WeatherState, x_cur: WeatherState,
                  provider: BoundaryProvider, rng: np.random.Generator) -> WeatherState:
    """X̂^{t+1} ur X^{t−1}, X^t och leverantörens rand; randcellerna kopieras exakt"""
    spec = forecaster.spec
    lead = x_cur.lead_time
    rand = provider.boundary(lead + 1)
    par = assemble_conditioning(
        x_prev, x_cur, provider.future_boundary(lead + 1),
        [provider.forcing(lead - 1), provider.forcing(lead), provider.forcing(lead + 1)],
        forecaster.statics, spec, forecaster.stats, no_future=provider.no_future,
    )
    inputs = NetInputs.from_pairs([par])
    schema = forecaster.schedule
    z0 = schema.sigmas[0] * rng.standard_normal((1,) + spec.interior_shape)
    r = heun_sample(forecaster.denoise_fn(inputs), z0, schema)[0]

    z_cur = crop_interior(standardize(x_cur.values, forecaster.stats, spec.variables), spec)
    z_next = residual_decode(r, z_cur, forecaster.stats)
    inre = unstandardize(z_next, forecaster.stats, spec.variables)
    if not np.all(np.isfinite(inre)):
        raise NumericalError(f"prognosen vid ledtid {lead + 1} innehåller NaN/Inf")
    return WeatherState(splice_interior(inre, rand.values, spec), lead_time=lead + 1)


StreamSource = Union[np.random.Generator, Callable[[int], np.random.Generator]]


def rollout(forecaster: Forecaster, x_prev: WeatherState, x_cur: WeatherState,
            provider: BoundaryProvider, steps: int, rng: StreamSource,
            teacher_forced: bool = False) -> List[WeatherState]:
    """T autoregressiva steg; returnerar tillstånden för ledtid 1..T

    Args:
        rng: en generator som används i alla steg, eller en funktion ledtid -> generator
        teacher_forced: använd sanna tillstånd som indata (diagnostik, kräver TruthBoundary)
    """
    if steps < 1:
        raise ContractError(f"rollout kräver minst ett steg, fick {steps}")
    if teacher_forced and not hasattr(provider, "state"):
        raise ContractError("lärarstyrd körning kräver en leverantör med sanna tillstånd")

    utfall: List[WeatherState] = []
    föregående, aktuellt = x_prev, x_cur
    for k in range(steps):
        ström = rng(k + 1) if callable(rng) else rng
        try:
            nästa = forecast_step(forecaster, föregående, aktuellt, provider, ström)
        except RandprognosError as e:
            logger.error(f"Prognossteget till ledtid {k + 1} misslyckades: {e}")
            raise type(e)(f"ledtid {k + 1}: {e}") from e
        utfall.append(nästa)
        if teacher_forced:
            föregående, aktuellt = provider.state(k), provider.state(k + 1)
        else:
            föregående, aktuellt = aktuellt, nästa
    return utfall


@dataclass
class EnsembleForecast:
    """Medlemmar [N_ens, T, d, H, W] plus metadata"""
    members: np.ndarray
    member_seeds: List[Tuple[int, ...]]
    schedule: Dict
    provider_kind: str
    lead_times: List[int]
    wall_time: float = 0.0

    @property
    def n_ens(self) -> int:
        return self.members.shape[0]


def _member_rollout(forecaster, provider, x_prev, x_cur, steps, master_seed, sample, member) -> np.ndarray:
    bana = rollout(forecaster, x_prev, x_cur, provider, steps,
                   lambda lead: member_stream(master_seed, sample, member, lead))
    return np.stack([s.values for s in bana])


def ensemble_forecast(forecaster: Forecaster, x_prev: WeatherState, x_cur: WeatherState,
                      provider: BoundaryProvider, steps: int, n_ens: int, master_seed: int,
                      sample: int = 0, n_jobs: int = 1) -> EnsembleForecast:
    """N_ens oberoende trajektorier; medlemmarna körs parallellt och sorteras efter index"""
    if n_ens < 1:
        raise ContractError(f"ensemblen måste ha minst en medlem, fick {n_ens}")
    start = time.time()
    banor = Parallel(n_jobs=n_jobs)(
        delayed(_member_rollout)(forecaster, provider, x_prev, x_cur, steps, master_seed, sample, m)
        for m in range(n_ens)
    )
    tid = time.time() - start
    logger.info(f"Ensemble med {n_ens} medlemmar × {steps} steg klar på {tid:.1f} s")
    return EnsembleForecast(
        members=np.stack(banor),
        member_seeds=[member_seed(master_seed, sample, m) for m in range(n_ens)],
        schedule=forecaster.schedule.to_dict(),
        provider_kind=provider.kind,
        lead_times=list(range(1, steps + 1)),
        wall_time=tid,
    )


def forecast_split(forecaster: Forecaster, dataset, trajectories: Sequence[int], init_index: int,
                   steps: int, n_ens: int, master_seed: int, boundary_kind: str = "truth",
                   n_jobs: int = 1) -> Tuple[np.ndarray, List[List[Tuple[int, ...]]]]:
    """Prognoser för flera trajektorier; array [S, N_ens, T, d, H, W] och medlemsnycklar

    Alla (prov, medlem)-par körs som oberoende uppgifter.
    """
    leverantörer = [make_provider(boundary_kind, dataset, i, init_index) for i in trajectories]
    for lev in leverantörer:
        lev.boundary(steps)
    uppgifter = [(s, m) for s in range(len(trajectories)) for m in range(n_ens)]
    logger.info(f"Prognos: {len(trajectories)} prov × {n_ens} medlemmar × {steps} steg, "
                f"rand '{boundary_kind}', n_jobs {n_jobs}")
    start = time.time()
    banor = Parallel(n_jobs=n_jobs)(
        delayed(_member_rollout)(forecaster, leverantörer[s], leverantörer[s].state(-1),
                                 leverantörer[s].state(0), steps, master_seed, s, m)
        for s, m in uppgifter
    )
    logger.info(f"Prognosen tog {time.time() - start:.1f} s")
    d, h, w = dataset.spec.shape
    utfall = np.stack(banor).reshape(len(trajectories), n_ens, steps, d, h, w)
    nycklar = [[list(member_seed(master_seed, s, m)) for m in range(n_ens)] for s in range(len(trajectories))]
    return utfall, nycklar
