#!/usr/bin/env python3
"""
Diffusionsmatematik: brusschema, förkonditionering, Heun-lösare, träningsbrus och förlustvikt

Förkonditioneringen:
    c_skip = σ_d² / (σ² + σ_d²)
    c_out  = σ·σ_d / √(σ² + σ_d²)
    c_in   = 1 / √(σ² + σ_d²)
    c_noise = ln(σ) / 4
så att D(Z; σ) = c_skip·Z + c_out·F(c_in·Z, c_noise, I, B) och ω = 1/c_out².
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from autodiff import Tape, Tensor, add, scale
from errors import ConfigError, DimensionError, DomainError, NumericalError, ScheduleIndexError

logger = logging.getLogger(__name__)

Sigma = Union[float, np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """σ-stege σ_0 = σ_max > ... > σ_{N−1} = σ_min > σ_N = 0"""
    sigma_min: float
    sigma_max: float
    rho: float = 7.0
    num_steps: int = 20

    def __post_init__(self):
        if self.num_steps < 2:
            raise ConfigError(f"schemat kräver minst 2 steg, fick {self.num_steps}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError(f"kräver 0 < σ_min < σ_max, fick {self.sigma_min} och {self.sigma_max}")
        if not self.rho > 0:
            raise ConfigError(f"ρ måste vara positiv, fick {self.rho}")

    @classmethod
    def from_config(cls, cfg, training: bool = False) -> "NoiseSchedule":
        prefix = "schedule.train_" if training else "schedule."
        return cls(sigma_min=cfg[prefix + "sigma_min"], sigma_max=cfg[prefix + "sigma_max"],
                   rho=cfg["schedule.rho"], num_steps=cfg["schedule.num_steps"])

    @cached_property
    def sigmas(self) -> np.ndarray:
        n = self.num_steps
        r = 1.0 / self.rho
        steg = np.arange(n, dtype=np.float64) / (n - 1)
        stege = np.empty(n + 1)
        stege[:n] = (self.sigma_max ** r + steg * (self.sigma_min ** r - self.sigma_max ** r)) ** self.rho
        stege[0] = self.sigma_max
        stege[n - 1] = self.sigma_min
        stege[n] = 0.0
        if not np.all(np.diff(stege) < 0):
            raise ConfigError("σ-stegen är inte strikt avtagande")
        stege.flags.writeable = False
        return stege

    def to_dict(self):
        return {"sigma_min": self.sigma_min, "sigma_max": self.sigma_max,
                "rho": self.rho, "num_steps": self.num_steps}


def sigma_at(schedule: NoiseSchedule, n: int) -> float:
    """σ_n för 0 ≤ n ≤ N"""
    if not 0 <= n <= schedule.num_steps:
        raise ScheduleIndexError(f"brusnivå {n} ligger utanför 0..{schedule.num_steps}")
    return float(schedule.sigmas[n])


@dataclass(frozen=True)
class Preconditioner:
    sigma_data: float = 1.0

    def __post_init__(self):
        if not self.sigma_data > 0:
            raise ConfigError(f"σ_data måste vara positiv, fick {self.sigma_data}")


def _kontrollera_sigma(sigma: Sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.float64)
    if not np.all(s > 0):
        raise DomainError(f"σ måste vara positiv, fick {sigma}")
    return s


def precondition_coeffs(pre: Preconditioner, sigma: Sigma) -> Tuple[np.ndarray, ...]:
    """(c_skip, c_out, c_in, c_noise) för σ > 0 (skalär eller array)"""
    s = _kontrollera_sigma(sigma)
    sd = pre.sigma_data
    nämnare = s * s + sd * sd
    rot = np.sqrt(nämnare)
    return sd * sd / nämnare, s * sd / rot, 1.0 / rot, np.log(s) / 4.0


def loss_weight(pre: Preconditioner, sigma: Sigma) -> np.ndarray:
    """ω = (σ² + σ_d²)/(σ·σ_d)²"""
    s = _kontrollera_sigma(sigma)
    sd = pre.sigma_data
    return (s * s + sd * sd) / (s * sd) ** 2


def _per_prov(värde: np.ndarray, n: int) -> np.ndarray:
    v = np.broadcast_to(np.asarray(värde, dtype=np.float64).reshape(-1), (n,))
    return v.reshape(n, 1, 1, 1)


def apply_denoiser(denoiser, z, sigma: Sigma, cond, pre: Preconditioner,
                   tape: Optional[Tape] = None) -> Tensor:
    """D(Z; σ) = c_skip·Z + c_out·F(c_in·Z, c_noise, I, B)

    Args:
        denoiser: objekt med raw_forward(scaled_latent, c_noise, cond, tape)
        z: brusig latent [N, d, Hi, Wi]
        sigma: σ per prov (skalär eller [N])
        cond: nätverksindata (I och B) för samma N prov
    """
    z = np.asarray(z.data if isinstance(z, Tensor) else z)
    if z.ndim != 4:
        raise DimensionError(f"apply_denoiser: latenten måste ha formen [N, d, Hi, Wi], fick {z.shape}")
    n = z.shape[0]
    c_skip, c_out, c_in, c_noise = precondition_coeffs(pre, sigma)
    c_skip, c_out, c_in = (_per_prov(c, n) for c in (c_skip, c_out, c_in))
    c_noise = np.broadcast_to(np.asarray(c_noise, dtype=np.float64).reshape(-1), (n,))

    dtyp = denoiser.dtype
    f = denoiser.raw_forward(Tensor((c_in * z).astype(dtyp)), c_noise, cond, tape=tape)
    if f.shape != z.shape:
        raise DimensionError(f"apply_denoiser: F har formen {f.shape}, latenten {z.shape}")
    return add(scale(f, c_out, tape=tape), (c_skip * z).astype(f.dtype), tape=tape)


class NFECounter:
    """Räknar brusreducerarens anrop (funktionsutvärderingar)"""

    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray]):
        self.fn = fn
        self.count = 0

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        self.count += 1
        return self.fn(x, sigma)


def heun_sample(denoise_fn: Callable[[np.ndarray, float], np.ndarray],
                z0: np.ndarray,
                schedule: NoiseSchedule,
                euler_only: bool = False,
                record: bool = False):
    """Deterministisk Heun-integration av dx/dσ = (x − D(x; σ))/σ nedför stegen

    Sista steget in i σ_N = 0 är ett rent Euler-steg, så N steg kostar 2N − 1
    utvärderingar. z0 ska redan vara dragen ur N(0, σ_0² I).

    Args:
        denoise_fn: D(x, σ) -> x-formad array
        z0: startlatent
        schedule: brusschema
        euler_only: hoppa över Heun-korrektionen i alla steg
        record: returnera även tillståndet vid varje brusnivå

    Returns:
        slutsampel, eller (slutsampel, lista med N + 1 tillstånd) om record
    """
    sigmas = schedule.sigmas
    x = np.asarray(z0, dtype=np.float64)
    spår: List[np.ndarray] = [x.copy()] if record else []

    for n in range(schedule.num_steps):
        s, s_nästa = sigmas[n], sigmas[n + 1]
        d = (x - denoise_fn(x, s)) / s
        x_euler = x + (s_nästa - s) * d
        if s_nästa > 0 and not euler_only:
            d2 = (x_euler - denoise_fn(x_euler, s_nästa)) / s_nästa
            x = x + (s_nästa - s) * 0.5 * (d + d2)
        else:
            x = x_euler
        if not np.all(np.isfinite(x)):
            logger.error(f"Heun-lösaren gav NaN/Inf i steg {n} (σ = {s:.4g})")
            raise NumericalError(f"icke-ändliga värden i lösarsteg {n} (σ = {s:.4g})")
        if record:
            spår.append(x.copy())

    return (x, spår) if record else x


def sample_training_noise(schedule: NoiseSchedule, rng: np.random.Generator,
                          shape: Tuple[int, ...]) -> Tuple[int, float, np.ndarray]:
    """Drar n ~ U{0..N−1} och ε ~ N(0, σ_n² I) med formen shape"""
    n = int(rng.integers(0, schedule.num_steps))
    sigma = float(schedule.sigmas[n])
    return n, sigma, sigma * rng.standard_normal(shape)
