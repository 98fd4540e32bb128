#!/usr/bin/env python3
"""
Felklasser för Randprognos

Varje fel bär en symbolisk kod (skrivs som ERROR:<KOD>: av CLI:t) och en exitkod.
"""


class RandprognosError(Exception):
    """Basklass för alla fel i Randprognos"""

    kod = "INTERNAL"
    exitkod = 1


class ContractError(RandprognosError):
    """Ett anropskontrakt bröts (fel argument, fel ordning)"""

    kod = "CONTRACT"


class DimensionError(ContractError, ValueError):
    """Formen på en array stämmer inte med det som krävs"""


class DomainError(ContractError, ValueError):
    """Ett argument ligger utanför funktionens definitionsmängd"""


class BoundaryAccessError(ContractError):
    """Läsning av en randcell via I^t eller en innercell via B^t"""


class MissingVariableError(ContractError, KeyError):
    """Variabel saknas i normaliseringsstatistiken"""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ScheduleIndexError(ContractError, IndexError):
    """Brusnivåindex utanför schemat"""


class EmptyInputError(ContractError, ValueError):
    """Tom indata där minst ett element krävs"""


class InsufficientEnsembleError(ContractError, ValueError):
    """För få ensemblemedlemmar för måttet"""


class ConfigError(RandprognosError):
    """Ogiltig eller okänd konfiguration"""

    kod = "CONFIG"
    exitkod = 2


class IncompatibleCheckpointError(ConfigError):
    """Checkpointens arkitektur matchar inte den förväntade"""


class DataIOError(RandprognosError):
    """Fil saknas, är korrupt eller får inte skrivas över"""

    kod = "IO"
    exitkod = 3


class MissingBoundaryError(DataIOError):
    """Randdata saknas för ett efterfrågat ledtidssteg"""


class NumericalError(RandprognosError):
    """NaN/Inf eller annat numeriskt haveri"""

    kod = "NUMERICAL"
    exitkod = 4


class DegenerateStatisticsError(NumericalError):
    """Variabel med noll varians i träningsdata"""
