"""
Konfigurationsfil för Randprognos
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from errors import ConfigError

logger = logging.getLogger(__name__)

# Loggningsinställningar
LOG_FIL = "randprognos.log"
LOG_NIVÅ = "INFO"

# Filformat
FORMAT_VERSION = 1
HEADER_TERMINATOR = b"\n\x00"

# Rutnät (toyvärlden)
RUTNÄT_BREDD = 48
RUTNÄT_HÖJD = 48
RANDBREDD = 4
TIDSSTEG_TIMMAR = 3.0

# Toyatmosfär
ROTATIONSHASTIGHET = 2.0 * math.pi / 48.0  # radianer per steg, ett varv på 48 steg
DIFFUSION = 0.05  # celler² per steg
DYGNSAMPLITUD = 0.2
DYGNSPERIOD = 8  # steg (8 × 3 h)
ÅRSPERIOD = 64  # steg, långsam årstidsanalog
ANTAL_BLOBBAR = 3
OBSERVATIONSBRUS = 0.01

# Dataset
ANTAL_TRAJEKTORIER = 20
STEG_PER_TRAJEKTORIA = 24
ANDEL_VALIDERING = 0.1
ANDEL_TEST = 0.2

# Diffusion: träning enligt tabellen för träning, sampling enligt inferenstabellen
SIGMA_MIN_TRÄNING = 0.02
SIGMA_MAX_TRÄNING = 88.0
SIGMA_MIN = 0.03
SIGMA_MAX = 80.0
RHO = 7.0
LÖSARSTEG = 20
SIGMA_DATA = 1.0

# Modell (toyskala)
LATENT_BREDD = 32
UNET_BREDDER = (32, 64)
BRUSINBÄDDNING_BREDD = 128
FOURIER_FREKVENSER = 32
FOURIER_BASPERIOD = 16.0
MAX_GRUPPER = 8

# Träning (6:4:2-trappan nedskalad)
STEG_EPOKER = (60, 40, 20)
STEG_INLÄRNINGSTAKT = (1e-3, 1e-4, 1e-5)
BETA1 = 0.9
BETA2 = 0.95
VIKTAVKLINGNING = 0.1
BATCHSTORLEK = 8
GRADIENTKLIPPNING = 1.0

# Prognos
ENSEMBLESTORLEK = 25
PROGNOSSTEG = 19


def ladda_variabler() -> Dict[str, Any]:
    """Ladda variabelkatalogen från JSON-fil"""
    try:
        json_fil = os.path.join(os.path.dirname(__file__), 'variabler.json')
        with open(json_fil, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        # Fallback om JSON-filen inte finns
        return {
            "variabler": [
                {"namn": "theta", "enhet": "K", "nivåvikt": 1.0},
                {"namn": "u", "enhet": "m/s", "nivåvikt": 0.1},
                {"namn": "v", "enhet": "m/s", "nivåvikt": 0.1},
            ],
            "drivning": ["sin_dygn", "cos_dygn", "sin_arstid", "cos_arstid", "stralning"],
            "statiska": ["topografi", "x_koord", "y_koord", "randmask", "innermask"],
        }
    except Exception as e:
        logger.error(f"Fel vid laddning av variabler.json: {e}")
        raise ConfigError(f"variabler.json kunde inte läsas: {e}") from e


VARIABLER = ladda_variabler()
VARIABELNAMN = tuple(v["namn"] for v in VARIABLER["variabler"])
NIVÅVIKTER = tuple(float(v["nivåvikt"]) for v in VARIABLER["variabler"])
DRIVNINGSNAMN = tuple(VARIABLER["drivning"])
STATISKA_NAMN = tuple(VARIABLER["statiska"])


# ---------------------------------------------------------------------------
# Körkonfiguration: platt "nyckel = värde"-text
# ---------------------------------------------------------------------------

def _int_lista(text: str) -> Tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _float_lista(text: str) -> Tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "ja", "yes"):
        return True
    if t in ("0", "false", "nej", "no"):
        return False
    raise ValueError(f"inte ett sanningsvärde: {text!r}")


def _positiv(v) -> bool:
    return v > 0


def _icke_negativ(v) -> bool:
    return v >= 0


def _alla_positiva(v) -> bool:
    return len(v) > 0 and all(x > 0 for x in v)


def _andel(v) -> bool:
    return 0.0 < v < 1.0


@dataclass(frozen=True)
class Nyckel:
    """En dokumenterad nyckel i körkonfigurationen"""
    typ: Callable[[str], Any]
    standard: Any
    beskrivning: str
    validera: Optional[Callable[[Any], bool]] = None


def _format(värde: Any) -> str:
    if isinstance(värde, bool):
        return "true" if värde else "false"
    if isinstance(värde, tuple):
        return ",".join(_format(v) for v in värde)
    if isinstance(värde, float):
        return repr(värde)
    return str(värde)


REGISTER: Dict[str, Nyckel] = {
    # rutnät
    "grid.width": Nyckel(int, RUTNÄT_BREDD, "Rutnätets bredd W i celler", _positiv),
    "grid.height": Nyckel(int, RUTNÄT_HÖJD, "Rutnätets höjd H i celler", _positiv),
    "grid.boundary_width": Nyckel(int, RANDBREDD, "Randbredd b i celler från varje kant", _positiv),
    "grid.timestep_hours": Nyckel(float, TIDSSTEG_TIMMAR, "Simulerade timmar per steg", _positiv),
    # toyvärld
    "toy.rotation_rate": Nyckel(float, ROTATIONSHASTIGHET, "Stelkroppsrotation ω i radianer per steg"),
    "toy.diffusion": Nyckel(float, DIFFUSION, "Diffusionskoefficient κ (celler²/steg)", _icke_negativ),
    "toy.diurnal_amplitude": Nyckel(float, DYGNSAMPLITUD, "Dygnsamplitud A"),
    "toy.diurnal_period": Nyckel(int, DYGNSPERIOD, "Dygnsperiod P i steg", lambda v: v >= 2),
    "toy.annual_period": Nyckel(int, ÅRSPERIOD, "Årstidsperiod i steg", lambda v: v >= 2),
    "toy.n_blobs": Nyckel(int, ANTAL_BLOBBAR, "Antal blobbar per trajektoria", _positiv),
    "toy.blob_width_min": Nyckel(float, 3.0, "Minsta blobbredd (celler)", _positiv),
    "toy.blob_width_max": Nyckel(float, 6.0, "Största blobbredd (celler)", _positiv),
    "toy.blob_amplitude_min": Nyckel(float, 0.5, "Minsta blobbamplitud", _positiv),
    "toy.blob_amplitude_max": Nyckel(float, 1.5, "Största blobbamplitud", _positiv),
    "toy.noise_std": Nyckel(float, OBSERVATIONSBRUS, "Observationsbrusets standardavvikelse", _icke_negativ),
    # dataset
    "data.n_trajectories": Nyckel(int, ANTAL_TRAJEKTORIER, "Antal trajektorier", lambda v: v >= 3),
    "data.n_steps": Nyckel(int, STEG_PER_TRAJEKTORIA, "Tillstånd per trajektoria", lambda v: v >= 3),
    "data.split_val": Nyckel(float, ANDEL_VALIDERING, "Andel trajektorier för validering", _andel),
    "data.split_test": Nyckel(float, ANDEL_TEST, "Andel trajektorier för test", _andel),
    "data.seed": Nyckel(int, 2024, "Huvudfrö för datagenereringen", _icke_negativ),
    # brusschema
    "schedule.num_steps": Nyckel(int, LÖSARSTEG, "Antal lösarsteg N", lambda v: v >= 2),
    "schedule.rho": Nyckel(float, RHO, "Schemaexponent ρ", _positiv),
    "schedule.sigma_min": Nyckel(float, SIGMA_MIN, "σ_min vid sampling", _positiv),
    "schedule.sigma_max": Nyckel(float, SIGMA_MAX, "σ_max vid sampling", _positiv),
    "schedule.train_sigma_min": Nyckel(float, SIGMA_MIN_TRÄNING, "σ_min vid träning", _positiv),
    "schedule.train_sigma_max": Nyckel(float, SIGMA_MAX_TRÄNING, "σ_max vid träning", _positiv),
    "schedule.sigma_data": Nyckel(float, SIGMA_DATA, "σ_data för förkonditioneringen", _positiv),
    # modell
    "model.latent_width": Nyckel(int, LATENT_BREDD, "Latent bredd efter kodarna", _positiv),
    "model.unet_widths": Nyckel(_int_lista, UNET_BREDDER, "Kanalbredd per U-Net-nivå", _alla_positiva),
    "model.embed_width": Nyckel(int, BRUSINBÄDDNING_BREDD, "Brusinbäddningens bredd", _positiv),
    "model.fourier_frequencies": Nyckel(int, FOURIER_FREKVENSER, "Antal Fourierfrekvenser", _positiv),
    "model.fourier_base_period": Nyckel(float, FOURIER_BASPERIOD, "Fourierbasperiod", _positiv),
    "model.max_groups": Nyckel(int, MAX_GRUPPER, "Högsta gruppantal i gruppnormeringen", _positiv),
    # träning
    "train.stage_epochs": Nyckel(_int_lista, STEG_EPOKER, "Epoker per steg i trappan", _alla_positiva),
    "train.stage_lrs": Nyckel(_float_lista, STEG_INLÄRNINGSTAKT, "Inlärningstakt per steg", _alla_positiva),
    "train.beta1": Nyckel(float, BETA1, "AdamW β1", _andel),
    "train.beta2": Nyckel(float, BETA2, "AdamW β2", _andel),
    "train.weight_decay": Nyckel(float, VIKTAVKLINGNING, "Frikopplad viktavklingning", _icke_negativ),
    "train.batch_size": Nyckel(int, BATCHSTORLEK, "Batchstorlek", _positiv),
    "train.grad_clip": Nyckel(float, GRADIENTKLIPPNING, "Global gradientnormgräns (0 = av)", _icke_negativ),
    "train.lambda_mode": Nyckel(str, "unit", "λ_d: unit eller inverse_variance",
                                lambda v: v in ("unit", "inverse_variance")),
    "train.val_samples": Nyckel(int, 32, "Valideringsprov per epok", _positiv),
    "train.dtype": Nyckel(str, "float32", "Flyttalsprecision för parametrar",
                          lambda v: v in ("float32", "float64")),
    "train.seed": Nyckel(int, 7, "Huvudfrö för träningen", _icke_negativ),
    # prognos
    "rollout.n_ens": Nyckel(int, ENSEMBLESTORLEK, "Ensemblestorlek", _positiv),
    "rollout.steps": Nyckel(int, PROGNOSSTEG, "Autoregressiva steg", _positiv),
    "rollout.n_jobs": Nyckel(int, 1, "Parallella medlemmar (joblib)", lambda v: v != 0),
    "rollout.seed": Nyckel(int, 11, "Huvudfrö för ensembleprognosen", _icke_negativ),
    # verifikation
    "metrics.ssr_bias_correction": Nyckel(_bool, True, "Använd faktorn √((N+1)/N) i SSR"),
}


class RunConfig:
    """Validerad körkonfiguration med kanonisk textform och hash"""

    def __init__(self, värden: Optional[Dict[str, Any]] = None):
        self._värden = {k: n.standard for k, n in REGISTER.items()}
        for nyckel, värde in (värden or {}).items():
            self._sätt(nyckel, värde)
        self._kontrollera_samband()

    def _sätt(self, nyckel: str, värde: Any, rad: Optional[int] = None):
        var = f" (rad {rad})" if rad is not None else ""
        if nyckel not in REGISTER:
            raise ConfigError(f"okänd nyckel '{nyckel}'{var}")
        post = REGISTER[nyckel]
        try:
            if isinstance(värde, str):
                värde = post.typ(värde.strip())
            elif isinstance(värde, list):
                värde = tuple(värde)
            elif post.typ is float and isinstance(värde, int):
                värde = float(värde)
        except ValueError as e:
            raise ConfigError(f"ogiltigt värde för '{nyckel}'{var}: {e}") from e
        if post.validera is not None and not post.validera(värde):
            raise ConfigError(f"värdet {värde!r} är inte tillåtet för '{nyckel}'{var}")
        self._värden[nyckel] = värde

    def _kontrollera_samband(self):
        v = self._värden
        if len(v["train.stage_epochs"]) != len(v["train.stage_lrs"]):
            raise ConfigError("train.stage_epochs och train.stage_lrs måste ha lika många steg")
        if v["schedule.sigma_min"] >= v["schedule.sigma_max"]:
            raise ConfigError("schedule.sigma_min måste vara mindre än schedule.sigma_max")
        if v["schedule.train_sigma_min"] >= v["schedule.train_sigma_max"]:
            raise ConfigError("schedule.train_sigma_min måste vara mindre än schedule.train_sigma_max")
        if v["toy.blob_width_min"] > v["toy.blob_width_max"]:
            raise ConfigError("toy.blob_width_min får inte överstiga toy.blob_width_max")
        if v["data.split_val"] + v["data.split_test"] >= 1.0:
            raise ConfigError("valideringen och testet tar hela datasetet")

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        """Tolkar 'nyckel = värde'-rader; '#' inleder kommentar"""
        cfg = cls()
        for nr, rad in enumerate(text.splitlines(), start=1):
            rad = rad.split("#", 1)[0].strip()
            if not rad:
                continue
            if "=" not in rad:
                raise ConfigError(f"rad {nr} saknar '=': {rad!r}")
            nyckel, värde = rad.split("=", 1)
            cfg._sätt(nyckel.strip(), värde, rad=nr)
        cfg._kontrollera_samband()
        return cfg

    @classmethod
    def from_file(cls, sökväg) -> "RunConfig":
        sökväg = Path(sökväg)
        try:
            text = sökväg.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"kan inte läsa konfigurationen {sökväg}: {e}") from e
        cfg = cls.from_text(text)
        logger.info(f"Läste konfiguration {sökväg} (hash {cfg.config_hash[:12]})")
        return cfg

    def with_overrides(self, **ändringar) -> "RunConfig":
        """Ny konfiguration med ändrade nycklar (punkter skrivs som '__')"""
        värden = dict(self._värden)
        for k, v in ändringar.items():
            värden[k.replace("__", ".")] = v
        return RunConfig(värden)

    def __getitem__(self, nyckel: str) -> Any:
        if nyckel not in self._värden:
            raise ConfigError(f"okänd nyckel '{nyckel}'")
        return self._värden[nyckel]

    def to_dict(self) -> Dict[str, Any]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self._värden.items())}

    def canonical_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self._värden.items()))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.canonical_text() == other.canonical_text()


def dokumentation() -> List[str]:
    """Listar alla nycklar med standardvärde och beskrivning"""
    return [f"{k} = {_format(n.standard)}  # {n.beskrivning}" for k, n in sorted(REGISTER.items())]
