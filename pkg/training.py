#!/usr/bin/env python3
"""
Träning av den konditionerade brusreduceraren

Ett steg: dra brusnivå n och brus ε per prov, Z = r + ε, en brusreducering
D(Z; σ_n), viktad kvadratfelsförlust mot målet, baklängesderivering,
global gradientklippning och ett AdamW-steg. Ingen autoregressiv träning.
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff import Tape, Tensor, add, backward, weighted_sq_mean
from denoisers import CondDenoiserNet, NetInputs
from edm import NoiseSchedule, Preconditioner, apply_denoiser, loss_weight, sample_training_noise
from errors import ConfigError, DimensionError, EmptyInputError, NumericalError
from grid import (
    BoundaryState,
    GridSpec,
    NormStats,
    assemble_conditioning,
    crop_interior,
    residual_decode,
    residual_encode,
    standardize,
)
from rng import TRÄNING, VALIDERING, substream

logger = logging.getLogger(__name__)

LOGGKOLUMNER = ["epoch", "stage", "lr", "train_loss", "val_loss", "wall_time"]


@dataclass(frozen=True)
class LossWeights:
    """h_l per variabel, λ_d per variabel och σ_res,d för avkodning

    Förlusten på avkodad prognos delas med σ_res² per variabel, så med
    λ_d = 1 väger alla standardiserade residualer lika (förutom h_l).
    Med inverse_variance blir λ_d = 1/σ_res,d².
    """
    level: np.ndarray
    lam: np.ndarray
    res_std: np.ndarray

    def __post_init__(self):
        for namn in ("level", "lam", "res_std"):
            arr = np.asarray(getattr(self, namn), dtype=np.float64)
            if not np.all(arr > 0):
                raise ConfigError(f"förlustvikterna {namn} måste vara strikt positiva")
            object.__setattr__(self, namn, arr)

    @classmethod
    def build(cls, spec: GridSpec, stats: NormStats, mode: str = "unit") -> "LossWeights":
        idx = stats.index(spec.variables)
        res_std = stats.res_std[idx]
        if mode == "unit":
            lam = np.ones_like(res_std)
        elif mode == "inverse_variance":
            lam = 1.0 / res_std ** 2
        else:
            raise ConfigError(f"okänt λ-läge '{mode}'")
        return cls(level=np.asarray(spec.level_weights), lam=lam, res_std=res_std)

    @property
    def decoded(self) -> np.ndarray:
        """Vikt per variabel för kvadratfel i standardiserade tillståndsenheter"""
        return self.level * self.lam / self.res_std ** 2

    @property
    def residual(self) -> np.ndarray:
        """Samma vikt uttryckt för kvadratfel i residualenheter"""
        return self.level * self.lam


@dataclass(frozen=True)
class TrainConfig:
    stage_epochs: Tuple[int, ...] = (60, 40, 20)
    stage_lrs: Tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    batch_size: int = 8
    grad_clip: float = 1.0
    lambda_mode: str = "unit"
    val_samples: int = 32
    seed: int = 7
    eps: float = 1e-8

    def __post_init__(self):
        if len(self.stage_epochs) != len(self.stage_lrs) or not self.stage_epochs:
            raise ConfigError("stegtabellen måste ha lika många epoker som inlärningstakter")
        if any(e <= 0 for e in self.stage_epochs) or any(lr <= 0 for lr in self.stage_lrs):
            raise ConfigError("epoker och inlärningstakter måste vara positiva")
        if self.batch_size < 1:
            raise ConfigError("batchstorleken måste vara minst 1")

    @classmethod
    def from_config(cls, cfg) -> "TrainConfig":
        return cls(
            stage_epochs=tuple(cfg["train.stage_epochs"]),
            stage_lrs=tuple(cfg["train.stage_lrs"]),
            beta1=cfg["train.beta1"],
            beta2=cfg["train.beta2"],
            weight_decay=cfg["train.weight_decay"],
            batch_size=cfg["train.batch_size"],
            grad_clip=cfg["train.grad_clip"],
            lambda_mode=cfg["train.lambda_mode"],
            val_samples=cfg["train.val_samples"],
            seed=cfg["train.seed"],
        )

    @property
    def total_epochs(self) -> int:
        return int(sum(self.stage_epochs))

    def stage_of(self, epoch: int) -> Tuple[int, float]:
        """(steg, inlärningstakt) för epok 1..total"""
        gräns = 0
        for steg, (antal, lr) in enumerate(zip(self.stage_epochs, self.stage_lrs)):
            gräns += antal
            if epoch <= gräns:
                return steg, lr
        raise ConfigError(f"epok {epoch} ligger efter sista steget")


@dataclass
class AdamState:
    """AdamW-tillstånd: stegräknare, moment per parameter och senaste gradientnorm före klippning"""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    grad_norm: float = 0.0

    @classmethod
    def fresh(cls, params: Dict[str, Tensor]) -> "AdamState":
        return cls(0, {n: np.zeros_like(p.data) for n, p in params.items()},
                   {n: np.zeros_like(p.data) for n, p in params.items()})


def wmse_loss(prediction, target, weights, omega=1.0) -> float:
    """(1/|G_I|) Σ_g Σ_d w_d·ω·(X̂ − X)², med medel över eventuella provaxlar

    Args:
        prediction, target: [..., d, Hi, Wi]
        weights: per variabel (h_l·λ_d), längd d
        omega: skalär eller en per prov (första axeln)
    """
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"wmse_loss: formerna {p.shape} och {t.shape} skiljer sig")
    if p.ndim < 3:
        raise DimensionError(f"wmse_loss: kräver [..., d, Hi, Wi], fick {p.shape}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (p.shape[-3],):
        raise DimensionError(f"wmse_loss: {w.shape[0] if w.ndim else 0} vikter för {p.shape[-3]} variabler")
    om = np.asarray(omega, dtype=np.float64)
    if om.ndim == 1:
        om = om.reshape((-1,) + (1,) * (p.ndim - 1))
    kvadrat = om * w[:, None, None] * (p - t) ** 2
    return float(kvadrat.sum() / (p.size / p.shape[-3]))


def optimizer_update(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState,
                     lr: float, beta1: float, beta2: float, weight_decay: float, eps: float = 1e-8):
    """AdamW med biaskorrektion; viktavklingningen verkar direkt på parametrarna"""
    state.step += 1
    t = state.step
    korr1 = 1.0 - beta1 ** t
    korr2 = 1.0 - beta2 ** t
    for namn, p in params.items():
        g = grads.get(namn)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[namn]
        v = state.v[namn]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hatt = m / korr1
        v_hatt = v / korr2
        p.data = (p.data * (1.0 - lr * weight_decay) - lr * m_hatt / (np.sqrt(v_hatt) + eps)).astype(p.dtype)


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Skalar gradienterna så att den globala normen är högst max_norm; returnerar normen före"""
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        faktor = max_norm / (norm + 1e-12)
        for n in grads:
            grads[n] = (grads[n] * faktor).astype(grads[n].dtype)
    return norm


# ---------------------------------------------------------------------------
# Data till träningen
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    inputs: NetInputs
    target: np.ndarray
    current: np.ndarray

    def __len__(self):
        return self.target.shape[0]


class TrainingData:
    """Prov (trajektoria, t) med 1 ≤ t ≤ T − 2 ur en datadelning"""

    def __init__(self, dataset, split: str, stats: NormStats):
        self.dataset = dataset
        self.stats = stats
        self.spec = dataset.spec
        self.trajectories = dataset.split(split)
        self.samples = [(i, t) for i in self.trajectories for t in range(1, dataset.n_steps - 1)]
        if not self.samples:
            raise EmptyInputError(f"datadelningen '{split}' saknar träningsprov")

    def __len__(self):
        return len(self.samples)

    def pair(self, i: int, t: int):
        ds = self.dataset
        return assemble_conditioning(
            ds.state(i, t - 1), ds.state(i, t),
            BoundaryState.from_state(ds.state(i, t + 1), self.spec),
            [ds.forcing(i, t - 1), ds.forcing(i, t), ds.forcing(i, t + 1)],
            ds.statics, self.spec, self.stats,
        )

    def batch(self, index: Sequence[int]) -> Batch:
        par, mål, nu = [], [], []
        for k in index:
            i, t = self.samples[k]
            par.append(self.pair(i, t))
            z_t = crop_interior(standardize(self.dataset.state(i, t), self.stats, self.spec.variables), self.spec)
            z_t1 = crop_interior(standardize(self.dataset.state(i, t + 1), self.stats, self.spec.variables), self.spec)
            mål.append(residual_encode(z_t, z_t1, self.stats))
            nu.append(z_t)
        return Batch(NetInputs.from_pairs(par), np.stack(mål), np.stack(nu))


NoiseDraw = Tuple[int, float, np.ndarray]


def draw_noise(schedule: NoiseSchedule, rng: np.random.Generator, batch: Batch) -> List[NoiseDraw]:
    """Brus för varje prov i batchen, i provordning"""
    return [sample_training_noise(schedule, rng, batch.target.shape[1:]) for _ in range(len(batch))]


def batch_loss(net, batch: Batch, draws: Sequence[NoiseDraw], pre: Preconditioner,
               weights: LossWeights, tape: Optional[Tape] = None) -> Tensor:
    """Viktad förlust för en batch med givna brusdragningar"""
    sigma = np.array([d[1] for d in draws])
    eps = np.stack([d[2] for d in draws])
    z = batch.target + eps
    d = apply_denoiser(net, z, sigma, batch.inputs, pre, tape=tape)
    omega = loss_weight(pre, sigma)
    w = weights.residual[None, :, None, None] * omega[:, None, None, None]
    fel = add(d, (-batch.target).astype(d.dtype), tape=tape)
    return weighted_sq_mean(fel, w, tape=tape)


def decoded_loss(net, batch: Batch, draws: Sequence[NoiseDraw], pre: Preconditioner,
                 weights: LossWeights, stats: NormStats) -> float:
    """Samma förlust beräknad på avkodad nästa-tillståndsprognos (utan tape)"""
    sigma = np.array([d[1] for d in draws])
    z = batch.target + np.stack([d[2] for d in draws])
    d = apply_denoiser(net, z, sigma, batch.inputs, pre).data.astype(np.float64)
    prognos = residual_decode(d, batch.current, stats)
    sanning = residual_decode(batch.target, batch.current, stats)
    return wmse_loss(prognos, sanning, weights.decoded, loss_weight(pre, sigma))


def train_step(net: CondDenoiserNet, batch: Batch, schedule: NoiseSchedule, state: AdamState,
               rng: np.random.Generator, tcfg: TrainConfig, lr: float, pre: Preconditioner,
               weights: LossWeights, batch_index: int = 0) -> float:
    """Ett optimeringssteg; uppdaterar net.params och state på plats"""
    draws = draw_noise(schedule, rng, batch)
    tape = Tape()
    förlust = batch_loss(net, batch, draws, pre, weights, tape=tape)
    värde = float(förlust.data)
    if not np.isfinite(värde):
        sigmor = ", ".join(f"{d[1]:.4g}" for d in draws)
        logger.error(f"Förlusten blev {värde} i batch {batch_index} (σ_n = {sigmor})")
        raise NumericalError(f"icke-ändlig förlust i batch {batch_index} (σ_n = {sigmor})")

    backward(tape, förlust)
    grads = {n: p.grad if p.grad is not None else np.zeros_like(p.data) for n, p in net.params.items()}
    norm = clip_global_norm(grads, tcfg.grad_clip)
    state.grad_norm = norm
    optimizer_update(net.params, grads, state, lr, tcfg.beta1, tcfg.beta2, tcfg.weight_decay, tcfg.eps)
    for p in net.params.values():
        p.grad = None
    logger.debug(f"Batch {batch_index}: förlust {värde:.5g}, gradientnorm {norm:.4g}")
    return värde


def validation_loss(net, data: TrainingData, schedule: NoiseSchedule, pre: Preconditioner,
                    weights: LossWeights, n_samples: int, seed: int, batch_size: int = 8) -> float:
    """Förlust på en fast mängd valideringsprov med fast brus (ström (seed, VALIDERING, k))"""
    antal = min(n_samples, len(data))
    urval = np.unique(np.linspace(0, len(data) - 1, antal).round().astype(int))
    summa = 0.0
    for start in range(0, len(urval), batch_size):
        del_urval = urval[start:start + batch_size]
        batch = data.batch(del_urval)
        draws = [sample_training_noise(schedule, substream(seed, VALIDERING, int(k)), batch.target.shape[1:])
                 for k in del_urval]
        summa += float(batch_loss(net, batch, draws, pre, weights).data) * len(del_urval)
    return summa / len(urval)


def train(net: CondDenoiserNet,
          data: TrainingData,
          val_data: Optional[TrainingData],
          tcfg: TrainConfig,
          schedule: NoiseSchedule,
          pre: Preconditioner,
          weights: LossWeights,
          state: Optional[AdamState] = None,
          start_epoch: int = 0,
          history: Optional[List[Dict]] = None,
          log_csv=None,
          end_epoch: Optional[int] = None,
          on_epoch_end: Optional[Callable[[int, AdamState, List[Dict]], None]] = None):
    """Stegvis träning från epok start_epoch + 1 till end_epoch (standard: sista)

    Ordningen i epok e kommer från strömmen (seed, TRÄNING, e, 0) och bruset i
    steg s från (seed, TRÄNING, e, s + 1). Att återuppta vid en epokgräns ger
    därmed samma parametrar som en oavbruten körning.

    Returns:
        (optimerartillstånd, historik med en rad per epok)
    """
    state = state if state is not None else AdamState.fresh(net.params)
    history = list(history or [])
    slut = tcfg.total_epochs if end_epoch is None else min(end_epoch, tcfg.total_epochs)

    if log_csv is not None:
        log_csv = Path(log_csv)
        ny = start_epoch == 0 or not log_csv.exists()
        with open(log_csv, "w" if ny else "a", newline="", encoding="utf-8") as f:
            if ny:
                csv.writer(f).writerow(LOGGKOLUMNER)

    if val_data is not None and start_epoch == 0 and not history:
        startförlust = validation_loss(net, val_data, schedule, pre, weights, tcfg.val_samples, tcfg.seed, tcfg.batch_size)
        logger.info(f"Valideringsförlust före träning: {startförlust:.5g}")
        history.append({"epoch": 0, "stage": -1, "lr": 0.0, "train_loss": None, "val_loss": startförlust})

    logger.info(f"Tränar epok {start_epoch + 1}..{slut} på {len(data)} prov (batch {tcfg.batch_size})")
    for epok in range(start_epoch + 1, slut + 1):
        start = time.time()
        steg, lr = tcfg.stage_of(epok)
        ordning = substream(tcfg.seed, TRÄNING, epok, 0).permutation(len(data))
        förluster = []
        for s, b0 in enumerate(range(0, len(data), tcfg.batch_size)):
            batch = data.batch(ordning[b0:b0 + tcfg.batch_size])
            rng = substream(tcfg.seed, TRÄNING, epok, s + 1)
            förluster.append(train_step(net, batch, schedule, state, rng, tcfg, lr, pre, weights, batch_index=s))

        tränförlust = float(np.mean(förluster))
        valförlust = None
        if val_data is not None:
            valförlust = validation_loss(net, val_data, schedule, pre, weights, tcfg.val_samples, tcfg.seed, tcfg.batch_size)
        tid = time.time() - start
        rad = {"epoch": epok, "stage": steg, "lr": lr, "train_loss": tränförlust, "val_loss": valförlust}
        history.append(rad)
        logger.info(f"Epok {epok}/{tcfg.total_epochs} (steg {steg}, lr {lr:g}): "
                    f"träning {tränförlust:.5g}, validering {valförlust if valförlust is None else f'{valförlust:.5g}'}, "
                    f"{tid:.1f} s")

        if log_csv is not None:
            with open(log_csv, "a", newline="", encoding="utf-8") as f:
                csv.writer(f).writerow([epok, steg, f"{lr:g}", f"{tränförlust:.8g}",
                                        "" if valförlust is None else f"{valförlust:.8g}", f"{tid:.3f}"])
        if on_epoch_end is not None:
            on_epoch_end(epok, state, history)

    return state, history
