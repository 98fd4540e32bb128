#!/usr/bin/env python3
"""
Brusreducerare bakom gränssnittet raw_forward(scaled_latent, c_noise, cond, tape)

AnalyticGaussianDenoiser: exakt posteriormedel för gaussiska data (verifierar lösaren).
CondDenoiserNet: pixelvisa kodare för inre område och rand, Fourierinbäddning av
brusnivån, litet modulerat U-Net och en avkodare som bara läser innercellerna.
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

import autodiff as ad
from autodiff import Tape, Tensor
from edm import Preconditioner, precondition_coeffs
from errors import ConfigError, DimensionError, DomainError, NumericalError
from grid import ConditioningPair, stack_conditioning
from rng import INIT, substream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetInputs:
    """Konditionering för N prov: I [N, C_I, Hi, Wi] och nollfyllt B [N, C_B, H, W]"""
    interior: np.ndarray
    boundary: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: Sequence[ConditioningPair]) -> "NetInputs":
        return cls(*stack_conditioning(pairs))

    def __len__(self):
        return self.interior.shape[0]


# ---------------------------------------------------------------------------
# Analytiskt orakel
# ---------------------------------------------------------------------------

class AnalyticGaussianDenoiser:
    """Posteriormedel E[x | y] för x ~ N(μ, diag c) och y = x + σ·ε"""

    dtype = np.float64

    def __init__(self, mean, var, pre: Optional[Preconditioner] = None):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.broadcast_to(np.asarray(var, dtype=np.float64), self.mean.shape)
        if not np.all(self.var > 0):
            raise DomainError("målvariansen måste vara strikt positiv")
        self.pre = pre if pre is not None else Preconditioner()

    def analytic_denoise(self, y, sigma) -> np.ndarray:
        """(c/(c+σ²))·y + (σ²/(c+σ²))·μ"""
        y = np.asarray(y, dtype=np.float64)
        s = np.asarray(sigma, dtype=np.float64)
        if np.any(s < 0):
            raise DomainError(f"σ får inte vara negativ, fick {sigma}")
        if s.ndim == 1 and y.ndim == self.mean.ndim + 1:
            s = s.reshape((-1,) + (1,) * self.mean.ndim)
        s2 = s * s
        return (self.var / (self.var + s2)) * y + (s2 / (self.var + s2)) * self.mean

    def raw_forward(self, scaled_latent: Tensor, c_noise, cond=None, tape: Optional[Tape] = None) -> Tensor:
        """F = (D_analytisk − c_skip·Z)/c_out, så att apply_denoiser återger D_analytisk"""
        sigma = np.exp(4.0 * np.asarray(c_noise, dtype=np.float64))
        c_skip, c_out, c_in, _ = precondition_coeffs(self.pre, sigma)
        form = (-1,) + (1,) * (scaled_latent.data.ndim - 1)
        c_skip, c_out, c_in = (np.reshape(c, form) for c in (c_skip, c_out, c_in))
        z = scaled_latent.data / c_in
        d = self.analytic_denoise(z, sigma)
        return Tensor((d - c_skip * z) / c_out)


def analytic_denoise(oracle: AnalyticGaussianDenoiser, y, sigma) -> np.ndarray:
    return oracle.analytic_denoise(y, sigma)


# ---------------------------------------------------------------------------
# Tränbart nätverk
# ---------------------------------------------------------------------------

def antal_grupper(kanaler: int, max_grupper: int) -> int:
    """Största gruppantal ≤ min(max_grupper, kanaler) som delar kanalantalet"""
    for g in range(min(max_grupper, kanaler), 0, -1):
        if kanaler % g == 0:
            return g
    return 1


ARKITEKTURNYCKLAR = (
    "n_vars", "interior_channels", "boundary_channels", "height", "width",
    "boundary_width", "latent_width", "unet_widths", "embed_width",
    "fourier_frequencies", "fourier_base_period", "max_groups", "dtype",
)


class CondDenoiserNet:
    """Konditionerad brusreducerare F_θ(c_in·Z, c_noise, I, B)"""

    def __init__(self, architecture: Dict, seed: int = 0, zero_decoder: bool = True):
        saknas = [k for k in ARKITEKTURNYCKLAR if k not in architecture]
        if saknas:
            raise ConfigError(f"arkitekturen saknar {saknas}")
        self.architecture = {k: architecture[k] for k in ARKITEKTURNYCKLAR}
        self.architecture["unet_widths"] = [int(w) for w in self.architecture["unet_widths"]]
        a = self.architecture
        if a["dtype"] not in ("float32", "float64"):
            raise ConfigError(f"okänd precision {a['dtype']}")
        self.dtype = np.dtype(a["dtype"])

        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._rng = substream(seed, INIT)
        self._bygg(zero_decoder)
        del self._rng

        h, w, b = a["height"], a["width"], a["boundary_width"]
        mask = np.ones((h, w), dtype=self.dtype)
        mask[b:h - b, b:w - b] = 0.0
        self._randmask = mask[None, None]
        logger.info(f"Brusreduceraren har {self.parameter_count} parametrar "
                    f"(latent {a['latent_width']}, U-Net {a['unet_widths']})")

    @classmethod
    def from_config(cls, cfg, spec, n_forcings: int, n_statics: int,
                    seed: Optional[int] = None, zero_decoder: bool = True) -> "CondDenoiserNet":
        d = spec.num_vars
        arkitektur = {
            "n_vars": d,
            "interior_channels": 2 * d + 3 * n_forcings + n_statics,
            "boundary_channels": 3 * d + 3 * n_forcings + n_statics,
            "height": spec.height,
            "width": spec.width,
            "boundary_width": spec.boundary_width,
            "latent_width": cfg["model.latent_width"],
            "unet_widths": list(cfg["model.unet_widths"]),
            "embed_width": cfg["model.embed_width"],
            "fourier_frequencies": cfg["model.fourier_frequencies"],
            "fourier_base_period": cfg["model.fourier_base_period"],
            "max_groups": cfg["model.max_groups"],
            "dtype": cfg["train.dtype"],
        }
        return cls(arkitektur, seed=cfg["train.seed"] if seed is None else seed, zero_decoder=zero_decoder)

    # -- parametrar ---------------------------------------------------------

    def _ny(self, namn: str, form: Tuple[int, ...], fan_in: Optional[int] = None, fyll: Optional[float] = None):
        if fyll is not None:
            data = np.full(form, fyll, dtype=self.dtype)
        else:
            gräns = 1.0 / math.sqrt(fan_in)
            data = self._rng.uniform(-gräns, gräns, size=form).astype(self.dtype)
        self.params[namn] = Tensor(data, requires_grad=True, name=namn)

    def _linjär(self, namn: str, c_in: int, c_ut: int, noll: bool = False, bias: float = 0.0):
        if noll:
            self._ny(f"{namn}.w", (c_ut, c_in), fyll=0.0)
        else:
            self._ny(f"{namn}.w", (c_ut, c_in), fan_in=c_in)
        self._ny(f"{namn}.b", (c_ut,), fyll=bias)

    def _faltning(self, namn: str, c_in: int, c_ut: int):
        self._ny(f"{namn}.k", (c_ut, c_in, 3, 3), fan_in=9 * c_in)
        self._ny(f"{namn}.b", (c_ut,), fyll=0.0)

    def _normering(self, namn: str, kanaler: int):
        e = self.architecture["embed_width"]
        self._linjär(f"{namn}.scale", e, kanaler, bias=1.0)
        self._linjär(f"{namn}.shift", e, kanaler)

    def _resblock(self, namn: str, c_in: int, c_ut: int):
        self._normering(f"{namn}.norm1", c_in)
        self._faltning(f"{namn}.conv1", c_in, c_ut)
        self._normering(f"{namn}.norm2", c_ut)
        self._faltning(f"{namn}.conv2", c_ut, c_ut)
        if c_in != c_ut:
            self._linjär(f"{namn}.skip", c_in, c_ut)

    def _bygg(self, zero_decoder: bool):
        a = self.architecture
        d, lat, e = a["n_vars"], a["latent_width"], a["embed_width"]
        bredder = a["unet_widths"]
        self._linjär("emb.fc1", 2 * a["fourier_frequencies"], e)
        self._linjär("emb.fc2", e, e)

        for namn, c in (("enc_i", a["interior_channels"] + d), ("enc_b", a["boundary_channels"])):
            self._linjär(f"{namn}.fc1", c, lat)
            self._normering(f"{namn}.norm", lat)
            self._linjär(f"{namn}.fc2", lat, lat)

        self._linjär("unet.in", lat, bredder[0])
        c = bredder[0]
        for i, w in enumerate(bredder):
            self._resblock(f"unet.down{i}", c, w)
            c = w
        self._resblock("unet.mid", c, c)
        for i in reversed(range(len(bredder) - 1)):
            self._resblock(f"unet.up{i}", c + bredder[i], bredder[i])
            c = bredder[i]
        self._normering("unet.out", c)
        self._linjär("dec", c, d, noll=zero_decoder)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def parameters(self):
        return list(self.params.values())

    # -- framåtpass ---------------------------------------------------------

    def _p(self, namn: str) -> Tensor:
        return self.params[namn]

    def _kontroll(self, t: Tensor, lager: str) -> Tensor:
        if not np.all(np.isfinite(t.data)):
            logger.error(f"NaN/Inf i lagret {lager}")
            raise NumericalError(f"icke-ändliga aktiveringar i lagret {lager}")
        return t

    def _lin(self, x: Tensor, namn: str, tape) -> Tensor:
        return ad.linear(x, self._p(f"{namn}.w"), self._p(f"{namn}.b"), tape=tape)

    def _modulerad(self, x: Tensor, namn: str, emb: Tensor, tape, pixelvis: bool = False) -> Tensor:
        skala = self._lin(emb, f"{namn}.scale", tape)
        skift = self._lin(emb, f"{namn}.shift", tape)
        if pixelvis:
            return ad.layer_norm_modulated(x, skala, skift, tape=tape)
        g = antal_grupper(x.shape[1], self.architecture["max_groups"])
        return ad.group_norm_modulated(x, g, skala, skift, tape=tape)

    def _embed(self, c_noise, tape) -> Tensor:
        a = self.architecture
        k = a["fourier_frequencies"]
        perioder = a["fourier_base_period"] ** (np.arange(k) / max(k - 1, 1))
        vinklar = 2.0 * math.pi * np.asarray(c_noise, dtype=np.float64).reshape(-1, 1) / perioder[None, :]
        egenskaper = Tensor(np.concatenate([np.sin(vinklar), np.cos(vinklar)], axis=1).astype(self.dtype))
        h = ad.silu(self._lin(egenskaper, "emb.fc1", tape), tape=tape)
        return ad.silu(self._lin(h, "emb.fc2", tape), tape=tape)

    def fourier_noise_embedding(self, sigma) -> np.ndarray:
        """Inbäddningen av c_noise(σ) = ln(σ)/4; form [N, embed_width]"""
        s = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
        if not np.all(s > 0):
            raise DomainError(f"σ måste vara positiv, fick {sigma}")
        return self._embed(np.log(s) / 4.0, None).data

    def _kodare(self, x: Tensor, namn: str, emb: Tensor, tape) -> Tensor:
        h = self._lin(x, f"{namn}.fc1", tape)
        h = ad.silu(self._modulerad(h, f"{namn}.norm", emb, tape, pixelvis=True), tape=tape)
        return self._lin(h, f"{namn}.fc2", tape)

    def _indata(self, array: np.ndarray) -> Tensor:
        return Tensor(np.asarray(array, dtype=self.dtype))

    def encode_grid(self, interior, scaled_latent: Tensor, boundary, emb: Tensor,
                    tape: Optional[Tape] = None) -> Tensor:
        """Fullt rutnät [N, latent, H, W]: innerceller från kodaren för (I ⊕ c_in·Z),
        randceller från randkodaren för B"""
        a = self.architecture
        b = a["boundary_width"]
        inre = ad.concat_channels(self._indata(interior), scaled_latent, tape=tape)
        kod_i = self._kodare(inre, "enc_i", emb, tape)
        kod_b = self._kodare(self._indata(boundary), "enc_b", emb, tape)
        kod_b = ad.scale(kod_b, self._randmask, tape=tape)
        return self._kontroll(ad.add(ad.pad(kod_i, b, b, b, b, tape=tape), kod_b, tape=tape), "encode_grid")

    def _res(self, x: Tensor, namn: str, emb: Tensor, tape) -> Tensor:
        h = ad.silu(self._modulerad(x, f"{namn}.norm1", emb, tape), tape=tape)
        h = ad.conv2d_3x3(h, self._p(f"{namn}.conv1.k"), self._p(f"{namn}.conv1.b"), tape=tape)
        h = ad.silu(self._modulerad(h, f"{namn}.norm2", emb, tape), tape=tape)
        h = ad.conv2d_3x3(h, self._p(f"{namn}.conv2.k"), self._p(f"{namn}.conv2.b"), tape=tape)
        genväg = self._lin(x, f"{namn}.skip", tape) if f"{namn}.skip.w" in self.params else x
        return self._kontroll(ad.add(h, genväg, tape=tape), namn)

    def _unet(self, x: Tensor, emb: Tensor, tape) -> Tensor:
        bredder = self.architecture["unet_widths"]
        multipel = 2 ** (len(bredder) - 1)
        ph, pw = (-x.shape[2]) % multipel, (-x.shape[3]) % multipel
        if ph or pw:
            x = ad.pad(x, 0, ph, 0, pw, tape=tape)

        h = self._lin(x, "unet.in", tape)
        genvägar = []
        for i in range(len(bredder)):
            h = self._res(h, f"unet.down{i}", emb, tape)
            if i < len(bredder) - 1:
                genvägar.append(h)
                h = ad.downsample_avg2(h, tape=tape)
        h = self._res(h, "unet.mid", emb, tape)
        for i in reversed(range(len(bredder) - 1)):
            h = ad.upsample_nearest2(h, tape=tape)
            h = ad.concat_channels(h, genvägar[i], tape=tape)
            h = self._res(h, f"unet.up{i}", emb, tape)
        h = ad.silu(self._modulerad(h, "unet.out", emb, tape), tape=tape)

        if ph or pw:
            h = ad.crop(h, 0, ph, 0, pw, tape=tape)
        return h

    def _kontrollera_indata(self, scaled_latent: Tensor, cond: NetInputs):
        a = self.architecture
        n = scaled_latent.shape[0]
        b = a["boundary_width"]
        hi, wi = a["height"] - 2 * b, a["width"] - 2 * b
        if scaled_latent.shape != (n, a["n_vars"], hi, wi):
            raise DimensionError(f"latenten har formen {scaled_latent.shape}, "
                                 f"förväntade {(n, a['n_vars'], hi, wi)}")
        if cond.interior.shape[1] != a["interior_channels"] or cond.boundary.shape[1] != a["boundary_channels"]:
            raise ConfigError(
                f"konditioneringen har {cond.interior.shape[1]}/{cond.boundary.shape[1]} kanaler, "
                f"nätverket är byggt för {a['interior_channels']}/{a['boundary_channels']}"
            )
        if cond.interior.shape != (n, a["interior_channels"], hi, wi) or \
                cond.boundary.shape != (n, a["boundary_channels"], a["height"], a["width"]):
            raise DimensionError(f"konditioneringens former {cond.interior.shape}/{cond.boundary.shape} "
                                 f"passar inte nätverket")

    def raw_forward(self, scaled_latent: Tensor, c_noise, cond: NetInputs,
                    tape: Optional[Tape] = None) -> Tensor:
        """F_θ: utdata [N, d, Hi, Wi] definierad på innercellerna"""
        self._kontrollera_indata(scaled_latent, cond)
        if scaled_latent.dtype != self.dtype:
            scaled_latent = Tensor(scaled_latent.data.astype(self.dtype))
        b = self.architecture["boundary_width"]
        emb = self._kontroll(self._embed(c_noise, tape), "emb")
        h = self.encode_grid(cond.interior, scaled_latent, cond.boundary, emb, tape)
        h = self._unet(h, emb, tape)
        h = ad.crop(h, b, b, b, b, tape=tape)
        return self._kontroll(self._lin(h, "dec", tape), "dec")

    def forward(self, scaled_latent, sigma, cond: NetInputs, tape: Optional[Tape] = None) -> Tensor:
        """F_θ för brusnivån σ (c_noise beräknas här)"""
        s = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
        if not np.all(s > 0):
            raise DomainError(f"σ måste vara positiv, fick {sigma}")
        if not isinstance(scaled_latent, Tensor):
            scaled_latent = Tensor(np.asarray(scaled_latent, dtype=self.dtype))
        c_noise = np.broadcast_to(np.log(s) / 4.0, (scaled_latent.shape[0],))
        return self.raw_forward(scaled_latent, c_noise, cond, tape=tape)
