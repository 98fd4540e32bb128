#!/usr/bin/env python3
"""
Filbehållare för dataset och prognoser

Format: ett JSON-huvud (UTF-8, sorterade nycklar, kompakt) avslutat med en
radbrytning och en nollbyte, följt av en little-endian float32-array i C-ordning.
Arrayens form står i huvudet under "shape". Samma indata ger samma bytes.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from config import FORMAT_VERSION, HEADER_TERMINATOR
from errors import DataIOError

logger = logging.getLogger(__name__)

FORMAT_NAMN = "randprognos"
DATATYPER = ("<f4", "<f8")


def encode_header(header: Dict[str, Any]) -> bytes:
    return json.dumps(header, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"), allow_nan=False).encode("utf-8")


def write_container(path, header: Dict[str, Any], array: np.ndarray, kind: str, dtype: str = "<f4",
                    overwrite: bool = False) -> Path:
    """Skriver huvud + array atomiskt. Befintlig fil skrivs bara över med overwrite=True"""
    path = Path(path)
    if path.exists() and not overwrite:
        raise DataIOError(f"{path} finns redan och skrivs inte över")
    if dtype not in DATATYPER:
        raise DataIOError(f"okänd datatyp {dtype} för {path}, tillåtna {DATATYPER}")
    data = np.ascontiguousarray(array, dtype=dtype)
    if not np.all(np.isfinite(data)):
        raise DataIOError(f"arrayen till {path} innehåller NaN/Inf")

    fullt = dict(header)
    fullt.update({"format": FORMAT_NAMN, "format_version": FORMAT_VERSION,
                  "kind": kind, "shape": list(data.shape), "dtype": dtype})
    try:
        text = encode_header(fullt)
    except ValueError as e:
        raise DataIOError(f"huvudet till {path} kan inte kodas: {e}") from e

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(text)
            f.write(HEADER_TERMINATOR)
            f.write(data.tobytes(order="C"))
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise DataIOError(f"kunde inte skriva {path}: {e}") from e

    logger.info(f"Skrev {kind} {path} med formen {tuple(data.shape)}")
    return path


def read_container(path, kind: str = None) -> Tuple[Dict[str, Any], np.ndarray]:
    """Läser en behållare; returnerar (huvud, array i huvudets datatyp)"""
    path = Path(path)
    try:
        rå = path.read_bytes()
    except OSError as e:
        raise DataIOError(f"kunde inte läsa {path}: {e}") from e

    slut = rå.find(HEADER_TERMINATOR)
    if slut < 0:
        raise DataIOError(f"{path} saknar huvudavslutning")
    try:
        header = json.loads(rå[:slut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataIOError(f"{path} har ett trasigt huvud: {e}") from e

    if header.get("format") != FORMAT_NAMN:
        raise DataIOError(f"{path} är inte en {FORMAT_NAMN}-fil")
    if header.get("format_version") != FORMAT_VERSION:
        raise DataIOError(f"{path} har formatversion {header.get('format_version')}, "
                          f"förväntade {FORMAT_VERSION}")
    if kind is not None and header.get("kind") != kind:
        raise DataIOError(f"{path} innehåller '{header.get('kind')}', förväntade '{kind}'")

    form = tuple(int(n) for n in header["shape"])
    kropp = rå[slut + len(HEADER_TERMINATOR):]
    dtyp = header.get("dtype", "<f4")
    if dtyp not in DATATYPER:
        raise DataIOError(f"{path} har okänd datatyp {dtyp}")
    förväntat = int(np.prod(form)) * np.dtype(dtyp).itemsize
    if len(kropp) != förväntat:
        raise DataIOError(f"{path} har {len(kropp)} databytes, förväntade {förväntat}")
    array = np.frombuffer(kropp, dtype=dtyp).reshape(form)
    logger.debug(f"Läste {header['kind']} {path} med formen {form}")
    return header, array


def write_json(path, innehåll: Dict[str, Any], overwrite: bool = False) -> Path:
    """Skriver ett litet JSON-dokument (t.ex. normaliseringsstatistik) deterministiskt"""
    path = Path(path)
    if path.exists() and not overwrite:
        raise DataIOError(f"{path} finns redan och skrivs inte över")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(json.dumps(innehåll, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
                        encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"kunde inte skriva {path}: {e}") from e
    logger.info(f"Skrev {path}")
    return path


def read_json(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DataIOError(f"kunde inte läsa {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataIOError(f"{path} är inte giltig JSON: {e}") from e
