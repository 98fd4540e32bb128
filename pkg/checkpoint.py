#!/usr/bin/env python3
"""
Checkpoints: JSON-manifest (namn, former, byteoffset, arkitektur) plus float32-blob

Blobben innehåller först alla parametrar i manifestordning, sedan (om optimeraren
sparas) första och andra momenten i samma ordning.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from dataset_io import read_container, write_container
from denoisers import ARKITEKTURNYCKLAR, CondDenoiserNet
from errors import DataIOError, IncompatibleCheckpointError
from grid import NormStats

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"


@dataclass
class Checkpoint:
    """Inläst checkpoint"""
    net: CondDenoiserNet
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    progress: Dict[str, Any] = field(default_factory=dict)
    stats: Optional[NormStats] = None
    config_hash: Optional[str] = None
    file_hash: Optional[str] = None


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_checkpoint(path, net: CondDenoiserNet, step: int = 0,
                    m: Optional[Dict[str, np.ndarray]] = None,
                    v: Optional[Dict[str, np.ndarray]] = None,
                    progress: Optional[Dict[str, Any]] = None,
                    stats: Optional[NormStats] = None,
                    config_hash: Optional[str] = None,
                    overwrite: bool = False) -> Path:
    """Sparar parametrar och (valfritt) optimerartillstånd i nätverkets egen precision"""
    namn = list(net.params.keys())
    dtyp = "<f8" if np.dtype(net.dtype) == np.float64 else "<f4"
    storlek = np.dtype(dtyp).itemsize
    delar: List[np.ndarray] = []
    tensorer = []
    offset = 0
    for n in namn:
        data = net.params[n].data
        tensorer.append({"name": n, "shape": list(data.shape), "offset": offset})
        delar.append(data.reshape(-1))
        offset += data.size * storlek

    har_moment = m is not None and v is not None
    if har_moment:
        for moment in (m, v):
            for n in namn:
                if moment[n].shape != net.params[n].shape:
                    raise DataIOError(f"momentet för {n} har fel form {moment[n].shape}")
                delar.append(moment[n].reshape(-1))

    header = {
        "architecture": net.architecture,
        "parameter_count": net.parameter_count,
        "tensors": tensorer,
        "optimizer": {"step": int(step), "has_moments": har_moment},
        "progress": progress or {},
        "stats": stats.to_dict() if stats is not None else None,
        "config_hash": config_hash,
    }
    blob = np.concatenate(delar).astype(dtyp) if delar else np.zeros(0, dtype=dtyp)
    return write_container(path, header, blob, CHECKPOINT_KIND, dtype=dtyp, overwrite=overwrite)


def load_checkpoint(path, expected_architecture: Optional[Dict] = None) -> Checkpoint:
    """Läser en checkpoint och validerar arkitekturen

    Raises:
        IncompatibleCheckpointError: arkitekturen eller tensorformerna stämmer inte
    """
    header, blob = read_container(path, CHECKPOINT_KIND)
    arkitektur = header["architecture"]
    if expected_architecture is not None:
        skillnader = [k for k in ARKITEKTURNYCKLAR
                      if _normera(expected_architecture.get(k)) != _normera(arkitektur.get(k))]
        if skillnader:
            detaljer = ", ".join(f"{k}: {arkitektur.get(k)} ≠ {expected_architecture.get(k)}" for k in skillnader)
            raise IncompatibleCheckpointError(f"checkpointen {path} passar inte modellen ({detaljer})")

    net = CondDenoiserNet(arkitektur, seed=0)
    dtyp = net.dtype
    element = {t["name"]: t for t in header["tensors"]}
    if set(element) != set(net.params):
        raise IncompatibleCheckpointError(f"checkpointen {path} har andra tensorer än arkitekturen")

    antal = 0
    for n, p in net.params.items():
        post = element[n]
        if tuple(post["shape"]) != p.shape:
            raise IncompatibleCheckpointError(f"tensorn {n} har formen {post['shape']}, förväntade {p.shape}")
        start = post["offset"] // blob.itemsize
        p.data = np.array(blob[start:start + p.data.size], dtype=dtyp).reshape(p.shape)
        antal += p.data.size

    m, v = {}, {}
    if header["optimizer"]["has_moments"]:
        for moment in (m, v):
            for n, p in net.params.items():
                moment[n] = np.array(blob[antal:antal + p.data.size], dtype=dtyp).reshape(p.shape)
                antal += p.data.size
    if antal != blob.size:
        raise DataIOError(f"checkpointen {path} har {blob.size} värden, förväntade {antal}")

    logger.info(f"Läste checkpoint {path} ({net.parameter_count} parametrar, steg {header['optimizer']['step']})")
    stats = NormStats.from_dict(header["stats"]) if header.get("stats") else None
    return Checkpoint(net=net, step=header["optimizer"]["step"], m=m, v=v,
                      progress=header.get("progress") or {}, stats=stats,
                      config_hash=header.get("config_hash"), file_hash=file_hash(path))


def _normera(värde):
    if isinstance(värde, (list, tuple)):
        return [_normera(x) for x in värde]
    if isinstance(värde, float) and värde.is_integer():
        return int(värde)
    return värde
