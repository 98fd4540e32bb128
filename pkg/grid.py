#!/usr/bin/env python3
"""
Rutnätsmodell för Randprognos

Innehåller rutnätsbeskrivningen, uppdelningen i inre område och rand,
normaliseringsstatistik, residualkodning och sammansättningen av
konditioneringen I^t (inre) och B^t (rand) för ett prognossteg.

Kanalordning i I^t och B^t: tillstånd äldst→nyast, drivning äldst→nyast,
statiska fält. Inom varje block ligger variablerna i katalogordning.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import (
    BoundaryAccessError,
    ConfigError,
    DegenerateStatisticsError,
    DimensionError,
    MissingBoundaryError,
    MissingVariableError,
)

logger = logging.getLogger(__name__)

ENHETSCIRKEL_TOLERANS = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Rutnät W×H med randbredd b räknat från varje kant"""
    width: int
    height: int
    boundary_width: int
    variables: Tuple[str, ...]
    level_weights: Tuple[float, ...]
    timestep_hours: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "level_weights", tuple(float(h) for h in self.level_weights))
        b = self.boundary_width
        if b < 1:
            raise ConfigError(f"randbredden måste vara minst 1, fick {b}")
        if self.width <= 2 * b or self.height <= 2 * b:
            raise ConfigError(
                f"rutnätet {self.width}×{self.height} saknar inre område med randbredd {b}"
            )
        if len(self.variables) < 1:
            raise ConfigError("minst en variabel krävs")
        if len(set(self.variables)) != len(self.variables):
            raise ConfigError(f"variabelnamnen är inte unika: {self.variables}")
        if len(self.level_weights) != len(self.variables):
            raise ConfigError("en nivåvikt per variabel krävs")
        for namn, h in zip(self.variables, self.level_weights):
            if not h > 0:
                raise ConfigError(f"nivåvikten för {namn} måste vara positiv, fick {h}")

    @classmethod
    def from_config(cls, cfg) -> "GridSpec":
        from config import NIVÅVIKTER, VARIABELNAMN

        return cls(
            width=cfg["grid.width"],
            height=cfg["grid.height"],
            boundary_width=cfg["grid.boundary_width"],
            variables=VARIABELNAMN,
            level_weights=NIVÅVIKTER,
            timestep_hours=cfg["grid.timestep_hours"],
        )

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.num_vars, self.height, self.width)

    @property
    def interior_hw(self) -> Tuple[int, int]:
        b = self.boundary_width
        return (self.height - 2 * b, self.width - 2 * b)

    @property
    def interior_shape(self) -> Tuple[int, int, int]:
        return (self.num_vars,) + self.interior_hw

    @property
    def interior_slices(self) -> Tuple[slice, slice]:
        b = self.boundary_width
        return (slice(b, self.height - b), slice(b, self.width - b))

    @cached_property
    def mask(self) -> "RegionMask":
        return RegionMask.from_spec(self)

    def to_dict(self) -> Dict:
        return {
            "width": self.width,
            "height": self.height,
            "boundary_width": self.boundary_width,
            "variables": list(self.variables),
            "level_weights": list(self.level_weights),
            "timestep_hours": self.timestep_hours,
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "GridSpec":
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            boundary_width=int(d["boundary_width"]),
            variables=tuple(d["variables"]),
            level_weights=tuple(d["level_weights"]),
            timestep_hours=float(d.get("timestep_hours", 3.0)),
        )


@dataclass(frozen=True)
class RegionMask:
    """Flaggor för rand- och innerceller (ömsesidigt uteslutande, tillsammans hela rutnätet)"""
    boundary: np.ndarray
    interior: np.ndarray

    @classmethod
    def from_spec(cls, spec: GridSpec) -> "RegionMask":
        rand = np.ones((spec.height, spec.width), dtype=bool)
        rand[spec.interior_slices] = False
        rand.flags.writeable = False
        inre = ~rand
        inre.flags.writeable = False
        return cls(boundary=rand, interior=inre)

    @property
    def n_boundary(self) -> int:
        return int(self.boundary.sum())

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())


def _låst(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class WeatherState:
    """Ett tidssteg av alla prognosvariabler [d, H, W] i fysikaliska enheter"""
    values: np.ndarray
    lead_time: int = 0

    def __post_init__(self):
        v = _låst(self.values)
        if v.ndim != 3:
            raise DimensionError(f"WeatherState kräver formen [d, H, W], fick {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DimensionError(f"WeatherState vid ledtid {self.lead_time} innehåller NaN/Inf")
        object.__setattr__(self, "values", v)

    def check(self, spec: GridSpec) -> "WeatherState":
        if self.values.shape != spec.shape:
            raise DimensionError(
                f"tillståndets form {self.values.shape} matchar inte rutnätet {spec.shape}"
            )
        return self


@dataclass(frozen=True)
class BoundaryState:
    """Randvärden [d, H, W]; innercellerna är NaN och läses aldrig"""
    values: np.ndarray
    lead_time: int = 0

    def __post_init__(self):
        v = _låst(self.values)
        if v.ndim != 3:
            raise DimensionError(f"BoundaryState kräver formen [d, H, W], fick {v.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_state(cls, state: WeatherState, spec: GridSpec) -> "BoundaryState":
        v = np.array(state.check(spec).values)
        v[(slice(None),) + spec.interior_slices] = np.nan
        return cls(values=v, lead_time=state.lead_time)

    def check(self, spec: GridSpec) -> "BoundaryState":
        if self.values.shape != spec.shape:
            raise DimensionError(
                f"randtillståndets form {self.values.shape} matchar inte rutnätet {spec.shape}"
            )
        if not np.all(np.isfinite(self.values[:, spec.mask.boundary])):
            raise MissingBoundaryError(f"randvärden saknas vid ledtid {self.lead_time}")
        return self


@dataclass(frozen=True)
class ForcingFrame:
    """Drivningsfält [d_f, H, W]; sin/cos-par uppfyller s² + c² = 1"""
    values: np.ndarray
    names: Tuple[str, ...]

    def __post_init__(self):
        v = _låst(self.values)
        object.__setattr__(self, "names", tuple(self.names))
        if v.ndim != 3 or v.shape[0] != len(self.names):
            raise DimensionError(f"ForcingFrame med {len(self.names)} namn fick formen {v.shape}")
        for i, namn in enumerate(self.names):
            if not namn.startswith("sin_"):
                continue
            partner = "cos_" + namn[4:]
            if partner in self.names:
                j = self.names.index(partner)
                avvikelse = np.max(np.abs(v[i] ** 2 + v[j] ** 2 - 1.0))
                if avvikelse > ENHETSCIRKEL_TOLERANS:
                    raise DimensionError(
                        f"drivningsparet {namn}/{partner} bryter enhetscirkeln ({avvikelse:.3g})"
                    )
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class StaticFields:
    """Statiska fält [d_s, H, W]: topografi, normerade koordinater, rand- och innermask"""
    values: np.ndarray
    names: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", _låst(self.values))
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def build(cls, spec: GridSpec, topography: np.ndarray, names: Sequence[str]) -> "StaticFields":
        mask = spec.mask
        rader, kolumner = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
        fält = {
            "topografi": np.asarray(topography, dtype=np.float64),
            "x_koord": kolumner / (spec.width - 1),
            "y_koord": rader / (spec.height - 1),
            "randmask": mask.boundary.astype(np.float64),
            "innermask": mask.interior.astype(np.float64),
        }
        saknas = [n for n in names if n not in fält]
        if saknas:
            raise ConfigError(f"okända statiska fält: {saknas}")
        return cls(values=np.stack([fält[n] for n in names]), names=tuple(names))

    def validate(self, spec: GridSpec) -> "StaticFields":
        mask = spec.mask
        for i, namn in enumerate(self.names):
            kanal = self.values[i]
            if namn in ("x_koord", "y_koord") and (kanal.min() < 0.0 or kanal.max() > 1.0):
                raise DimensionError(f"koordinatkanalen {namn} ligger utanför [0, 1]")
            if namn == "randmask" and not np.array_equal(kanal, mask.boundary.astype(np.float64)):
                raise DimensionError("randmasken stämmer inte med rutnätet")
            if namn == "innermask" and not np.array_equal(kanal, mask.interior.astype(np.float64)):
                raise DimensionError("innermasken stämmer inte med rutnätet")
        return self


@dataclass(frozen=True)
class NormStats:
    """Medel och populationsstandardavvikelse per variabel, samt residualstatistik
    beräknad på standardiserade data"""
    variables: Tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    res_mean: np.ndarray
    res_std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        for namn in ("mean", "std", "res_mean", "res_std"):
            arr = _låst(getattr(self, namn))
            if arr.shape != (len(self.variables),):
                raise DimensionError(f"NormStats.{namn} har formen {arr.shape}")
            object.__setattr__(self, namn, arr)
        for namn in ("std", "res_std"):
            arr = getattr(self, namn)
            for var, s in zip(self.variables, arr):
                if not s > 0:
                    raise DegenerateStatisticsError(f"variabeln '{var}' har {namn} = {s}")

    def index(self, variables: Optional[Sequence[str]] = None) -> np.ndarray:
        if variables is None:
            return np.arange(len(self.variables))
        idx = []
        for namn in variables:
            if namn not in self.variables:
                raise MissingVariableError(f"variabeln '{namn}' saknas i normaliseringsstatistiken")
            idx.append(self.variables.index(namn))
        return np.asarray(idx)

    def to_dict(self) -> Dict:
        return {
            "variables": list(self.variables),
            "mean": [float(x) for x in self.mean],
            "std": [float(x) for x in self.std],
            "res_mean": [float(x) for x in self.res_mean],
            "res_std": [float(x) for x in self.res_std],
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "NormStats":
        return cls(
            variables=tuple(d["variables"]),
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            res_mean=np.asarray(d["res_mean"], dtype=np.float64),
            res_std=np.asarray(d["res_std"], dtype=np.float64),
        )


def _kanalform(vektor: np.ndarray) -> np.ndarray:
    return vektor[:, None, None]


def split_interior_boundary(state: WeatherState, spec: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Delar ett tillstånd i inre block [d, H−2b, W−2b] och randvärden [d, antal randceller]

    Randvärdena ligger i radordning enligt RegionMask.boundary.
    """
    if isinstance(state, WeatherState):
        values = state.values
    else:
        values = np.asarray(state)
    if values.shape != spec.shape:
        raise DimensionError(
            f"split_interior_boundary: formen {values.shape} matchar inte {spec.shape}"
        )
    inre = values[(slice(None),) + spec.interior_slices]
    rand = values[:, spec.mask.boundary]
    return inre, rand


def crop_interior(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Skär ut det inre området ur de två sista axlarna"""
    if values.shape[-2:] != (spec.height, spec.width):
        raise DimensionError(f"crop_interior: formen {values.shape} är inte rutnätsformad")
    return values[(Ellipsis,) + spec.interior_slices]


def splice_interior(interior: np.ndarray, boundary: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Bygger fullt fält: randceller ur boundary, innerceller ur interior"""
    if interior.shape[-2:] != spec.interior_hw or boundary.shape[-2:] != (spec.height, spec.width):
        raise DimensionError(
            f"splice_interior: formerna {interior.shape} och {boundary.shape} passar inte rutnätet"
        )
    full = np.array(boundary, dtype=np.float64, copy=True)
    full[(Ellipsis,) + spec.interior_slices] = interior
    return full


def compute_norm_stats(trajectories: Union[np.ndarray, Sequence[np.ndarray]],
                       variables: Sequence[str]) -> NormStats:
    """Beräknar NormStats ur träningstrajektorier [n, T, d, H, W]

    Populationskonvention (division med N). Residualstatistiken beräknas på
    enstegsdifferenser av de standardiserade fälten.
    """
    data = [np.asarray(t, dtype=np.float64) for t in trajectories]
    if not data:
        raise DimensionError("compute_norm_stats: inga trajektorier")
    d = len(variables)
    for t in data:
        if t.ndim != 4 or t.shape[1] != d:
            raise DimensionError(f"compute_norm_stats: trajektorie med formen {t.shape}")
        if t.shape[0] < 2:
            raise DimensionError("compute_norm_stats: minst två tidssteg per trajektorie krävs")

    alla = np.concatenate([t.transpose(1, 0, 2, 3).reshape(d, -1) for t in data], axis=1)
    medel = alla.mean(axis=1)
    std = alla.std(axis=1)
    for namn, s in zip(variables, std):
        if not s > 0:
            raise DegenerateStatisticsError(f"variabeln '{namn}' har noll varians i träningsdata")

    diffar = []
    for t in data:
        z = (t - medel[None, :, None, None]) / std[None, :, None, None]
        diffar.append((z[1:] - z[:-1]).transpose(1, 0, 2, 3).reshape(d, -1))
    diff = np.concatenate(diffar, axis=1)
    res_medel = diff.mean(axis=1)
    res_std = diff.std(axis=1)
    for namn, s in zip(variables, res_std):
        if not s > 0:
            raise DegenerateStatisticsError(
                f"variabeln '{namn}' har noll residualvarians (konstant i tiden)"
            )

    logger.info(
        "Normaliseringsstatistik: "
        + ", ".join(f"{n}: μ={m:.4g} σ={s:.4g} σ_res={r:.4g}"
                    for n, m, s, r in zip(variables, medel, std, res_std))
    )
    return NormStats(tuple(variables), medel, std, res_medel, res_std)


def _värden(x) -> np.ndarray:
    return x.values if isinstance(x, WeatherState) else np.asarray(x, dtype=np.float64)


def _variabelaxel(x: np.ndarray, stats: NormStats, variables: Optional[Sequence[str]]):
    idx = stats.index(variables)
    if x.ndim < 3 or x.shape[-3] != len(idx):
        raise DimensionError(f"variabelaxeln i {x.shape} matchar inte {len(idx)} variabler")
    return idx


def standardize(x, stats: NormStats, variables: Optional[Sequence[str]] = None) -> np.ndarray:
    """(x − μ_d)/σ_d längs variabelaxeln (axel −3)"""
    v = _värden(x)
    idx = _variabelaxel(v, stats, variables)
    return (v - _kanalform(stats.mean[idx])) / _kanalform(stats.std[idx])


def unstandardize(z, stats: NormStats, variables: Optional[Sequence[str]] = None) -> np.ndarray:
    v = _värden(z)
    idx = _variabelaxel(v, stats, variables)
    return v * _kanalform(stats.std[idx]) + _kanalform(stats.mean[idx])


def residual_encode(x_t: np.ndarray, x_t1: np.ndarray, stats: NormStats) -> np.ndarray:
    """r = (X^{t+1} − X^t − μ_res)/σ_res på standardiserade fält"""
    x_t = np.asarray(x_t, dtype=np.float64)
    x_t1 = np.asarray(x_t1, dtype=np.float64)
    if x_t.shape != x_t1.shape:
        raise DimensionError(f"residual_encode: formerna {x_t.shape} och {x_t1.shape} skiljer sig")
    idx = _variabelaxel(x_t, stats, None)
    return (x_t1 - x_t - _kanalform(stats.res_mean[idx])) / _kanalform(stats.res_std[idx])


def residual_decode(r: np.ndarray, x_t: np.ndarray, stats: NormStats) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if r.shape != x_t.shape:
        raise DimensionError(f"residual_decode: formerna {r.shape} och {x_t.shape} skiljer sig")
    idx = _variabelaxel(x_t, stats, None)
    return x_t + r * _kanalform(stats.res_std[idx]) + _kanalform(stats.res_mean[idx])


@dataclass(frozen=True)
class ConditioningPair:
    """Inre indata I^t [C_I, H−2b, W−2b] och randindata B^t [C_B, H, W]

    B^t har NaN i alla innerceller. Åtkomst per cell går via interior_at/boundary_at
    som vägrar läsa fel område; nätverket får B^t via boundary_tensor() där
    innercellerna är nollställda.
    """
    interior: np.ndarray
    boundary: np.ndarray
    interior_channels: Tuple[str, ...]
    boundary_channels: Tuple[str, ...]
    spec: GridSpec = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "interior", _låst(self.interior))
        object.__setattr__(self, "boundary", _låst(self.boundary))

    def interior_at(self, channel: int, row: int, col: int) -> float:
        """Läser I^t i fullrutnätskoordinater; randceller är förbjudna"""
        if self.spec.mask.boundary[row, col]:
            raise BoundaryAccessError(f"cellen ({row}, {col}) är en randcell och ingår inte i I^t")
        b = self.spec.boundary_width
        return float(self.interior[channel, row - b, col - b])

    def boundary_at(self, channel: int, row: int, col: int) -> float:
        """Läser B^t; innerceller är förbjudna"""
        if self.spec.mask.interior[row, col]:
            raise BoundaryAccessError(f"cellen ({row}, {col}) är en innercell och ingår inte i B^t")
        return float(self.boundary[channel, row, col])

    def boundary_tensor(self) -> np.ndarray:
        """B^t med innercellerna nollställda"""
        return np.where(self.spec.mask.boundary[None], self.boundary, 0.0)


def channel_names(spec: GridSpec, forcing_names: Sequence[str],
                  static_names: Sequence[str]) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """Kanalnamn för I^t respektive B^t i fast ordning"""
    def block(tider: Sequence[str]) -> List[str]:
        return [f"{v}@{t}" for t in tider for v in spec.variables]

    drivning = [f"{f}@{t}" for t in ("t-1", "t", "t+1") for f in forcing_names]
    inre = block(("t-1", "t")) + drivning + list(static_names)
    rand = block(("t-1", "t", "t+1")) + drivning + list(static_names)
    return tuple(inre), tuple(rand)


def assemble_conditioning(x_prev: WeatherState,
                          x_cur: WeatherState,
                          x_next_boundary: Optional[BoundaryState],
                          forcings: Sequence[ForcingFrame],
                          statics: StaticFields,
                          spec: GridSpec,
                          stats: NormStats,
                          no_future: bool = False) -> ConditioningPair:
    """Sätter ihop I^t och B^t för ett steg

    Args:
        x_prev, x_cur: X^{t−1} och X^t i fysikaliska enheter
        x_next_boundary: X_B^{t+1}; innercellerna läses aldrig
        forcings: F^{t−1}, F^t, F^{t+1}
        statics: statiska fält
        no_future: ersätt X_B^{t+1} med X_B^t (persistens) när den saknas

    Returns:
        ConditioningPair med standardiserade tillstånd
    """
    x_prev.check(spec)
    x_cur.check(spec)
    if len(forcings) != 3:
        raise DimensionError(f"assemble_conditioning kräver tre drivningsfält, fick {len(forcings)}")
    if x_next_boundary is None:
        if not no_future:
            raise MissingBoundaryError(
                f"framtida randtillstånd saknas för ledtid {x_cur.lead_time + 1}"
            )
        nästa = x_cur.values
    else:
        nästa = x_next_boundary.check(spec).values

    hw = (spec.height, spec.width)
    for f in forcings:
        if f.values.shape[1:] != hw:
            raise DimensionError(f"drivningsfältets form {f.values.shape} passar inte rutnätet")
    if statics.values.shape[1:] != hw:
        raise DimensionError(f"de statiska fältens form {statics.values.shape} passar inte rutnätet")

    z_prev = standardize(x_prev.values, stats, spec.variables)
    z_cur = standardize(x_cur.values, stats, spec.variables)
    z_next = standardize(nästa, stats, spec.variables)
    drivning = [f.values for f in forcings]

    inre = crop_interior(np.concatenate([z_prev, z_cur] + drivning + [statics.values]), spec)
    rand = np.concatenate([z_prev, z_cur, z_next] + drivning + [statics.values])
    rand[(slice(None),) + spec.interior_slices] = np.nan

    inre_namn, rand_namn = channel_names(spec, forcings[0].names, statics.names)
    return ConditioningPair(inre, rand, inre_namn, rand_namn, spec)


def stack_conditioning(pairs: Sequence[ConditioningPair]) -> Tuple[np.ndarray, np.ndarray]:
    """Staplar par till nätverksindata: I [N, C_I, Hi, Wi] och nollfyllt B [N, C_B, H, W]"""
    if not pairs:
        raise DimensionError("stack_conditioning: inga par")
    return (np.stack([p.interior for p in pairs]),
            np.stack([p.boundary_tensor() for p in pairs]))
