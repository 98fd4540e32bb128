#!/usr/bin/env python3
"""
Reproducerbara slumpströmmar för Randprognos

All slump härleds från ett huvudfrö via räknarbaserade Philox-strömmar. En ström
identifieras av (huvudfrö, nycklar) där första nyckeln anger domänen:

    DATA        (DATA, trajektoria)                  observationsbrus, blobbar
    TRÄNING     (TRÄNING, epok, steg)                brusnivåer och brus per batch
    VALIDERING  (VALIDERING, prov)                   fast valideringsbrus
    ENSEMBLE    (ENSEMBLE, prov, medlem, ledtid)     Z_0 för ett prognossteg
    INIT        (INIT,)                              parameterinitiering

Samma nycklar ger alltid samma ström, oberoende av körordning och parallellism.
"""

from typing import Tuple

import numpy as np

DATA = 3
TRÄNING = 1
ENSEMBLE = 2
VALIDERING = 4
INIT = 5


def substream(master_seed: int, *keys: int) -> np.random.Generator:
    """Returnerar generatorn för strömmen (master_seed, keys)"""
    sekvens = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sekvens))


def member_seed(master_seed: int, sample: int, member: int) -> Tuple[int, ...]:
    """Den dokumenterade nyckeln för en ensemblemedlem (sparas i prognoshuvudet)"""
    return (int(master_seed), ENSEMBLE, int(sample), int(member))


def member_stream(master_seed: int, sample: int, member: int, lead: int) -> np.random.Generator:
    """Ström för ett prognossteg: ny Z_0 per (prov, medlem, ledtid)"""
    return substream(master_seed, ENSEMBLE, sample, member, lead)
