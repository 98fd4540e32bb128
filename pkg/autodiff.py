#!/usr/bin/env python3
"""
Liten tensormotor med baklängesderivering

En fast uppsättning operationer räcker för brusreduceraren: linjär avbildning över
kanalaxeln, 3×3-faltning, SiLU, modulerad grupp- och lagernormering, ned- och
uppsampling, kanalkonkatenering, addition, skalning, utfyllnad/beskärning och
viktade kvadratmedel.

Varje operation tar ett valfritt tape-argument. Utan tape (inferens) sparas inget.
Bakåtpasset går igenom tapen i omvänd inspelningsordning; ackumuleringsordningen
är därmed fast och gradienterna bitidentiska mellan körningar.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

Konstant = Union[float, np.ndarray]


class Tensor:
    """Värden plus (efter backward) gradient"""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        if self.data.ndim > 4:
            raise DimensionError(f"Tensor stöder högst 4 axlar, fick {self.data.shape}")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


class _Nod:
    __slots__ = ("op", "output", "inputs", "backward")

    def __init__(self, op, output, inputs, backward):
        self.op = op
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Inspelad operationsgraf i topologisk (inspelnings-) ordning"""

    def __init__(self):
        self.nodes: List[_Nod] = []

    def __len__(self):
        return len(self.nodes)


def _som_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _spela_in(tape: Optional[Tape], op: str, data: np.ndarray, inputs: Sequence[Tensor],
              backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    kräver = tape is not None and any(t.requires_grad for t in inputs)
    ut = Tensor(data, requires_grad=kräver)
    if kräver:
        tape.nodes.append(_Nod(op, ut, tuple(inputs), backward))
    return ut


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axel, n in enumerate(shape):
        if n == 1 and g.shape[axel] != 1:
            g = g.sum(axis=axel, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Operationer
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, tape: Optional[Tape] = None) -> Tensor:
    """y[:, o, ...] = Σ_c w[o, c] x[:, c, ...] + b[o] (kanalaxel 1)"""
    if x.data.ndim < 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: indata {x.shape} passar inte vikterna {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} passar inte vikterna {weight.shape}")
    xm = np.moveaxis(x.data, 1, -1)
    ym = xm @ weight.data.T
    if bias is not None:
        ym = ym + bias.data
    y = np.moveaxis(ym, -1, 1)

    def bakåt(gy):
        gm = np.moveaxis(gy, 1, -1)
        gx = np.moveaxis(gm @ weight.data, -1, 1)
        g2 = gm.reshape(-1, weight.shape[0])
        gw = g2.T @ xm.reshape(-1, weight.shape[1])
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) + ((bias,) if bias is not None else ())
    return _spela_in(tape, "linear", np.ascontiguousarray(y), inputs, lambda gy: bakåt(gy)[:len(inputs)])


def _konvolvera(xd: np.ndarray, kärna: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    utfylld = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    fönster = sliding_window_view(utfylld, (3, 3), axis=(2, 3))
    y = np.tensordot(fönster, kärna, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2)), fönster


def conv2d_3x3(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None, tape: Optional[Tape] = None) -> Tensor:
    """3×3-faltning med nollutfyllnad 1; kernels [C_ut, C_in, 3, 3]"""
    if (x.data.ndim != 4 or kernels.data.ndim != 4 or kernels.shape[2:] != (3, 3)
            or x.shape[1] != kernels.shape[1]):
        raise DimensionError(f"conv2d_3x3: indata {x.shape} passar inte kärnorna {kernels.shape}")
    y, fönster = _konvolvera(x.data, kernels.data)
    if bias is not None:
        y = y + bias.data[None, :, None, None]

    def bakåt(gy):
        vänd = np.ascontiguousarray(kernels.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx, _ = _konvolvera(gy, vänd)
        gk = np.tensordot(gy, fönster, axes=([0, 2, 3], [0, 2, 3]))
        gb = gy.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gk, gb

    inputs = (x, kernels) + ((bias,) if bias is not None else ())
    return _spela_in(tape, "conv2d_3x3", y, inputs, lambda gy: bakåt(gy)[:len(inputs)])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    s = _sigmoid(x.data)
    y = x.data * s

    def bakåt(gy):
        return (gy * (s + x.data * s * (1.0 - s)),)

    return _spela_in(tape, "silu", y, (x,), bakåt)


def _normera(x: np.ndarray, axlar: Tuple[int, ...], eps: float):
    medel = x.mean(axis=axlar, keepdims=True)
    centrerad = x - medel
    inv_std = 1.0 / np.sqrt((centrerad ** 2).mean(axis=axlar, keepdims=True) + eps)
    return centrerad * inv_std, inv_std


def _normera_bakåt(gxhat: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, axlar: Tuple[int, ...]) -> np.ndarray:
    m1 = gxhat.mean(axis=axlar, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=axlar, keepdims=True)
    return inv_std * (gxhat - m1 - xhat * m2)


def _kontrollera_modulering(op: str, x: Tensor, scale: Tensor, shift: Tensor):
    förväntad = x.shape[:2]
    if scale.shape != förväntad or shift.shape != förväntad:
        raise DimensionError(
            f"{op}: modulering {scale.shape}/{shift.shape} passar inte indata {x.shape}"
        )


def group_norm_modulated(x: Tensor, groups: int, scale: Tensor, shift: Tensor,
                         eps: float = 1e-6, tape: Optional[Tape] = None) -> Tensor:
    """Gruppnormering över (kanaler i gruppen, rader, kolumner), sedan y = x̂·scale + shift

    scale och shift har formen [N, C] och kommer från brusinbäddningen.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"group_norm_modulated: kräver [N, C, H, W], fick {x.shape}")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise DimensionError(f"group_norm_modulated: {groups} grupper delar inte {c} kanaler")
    _kontrollera_modulering("group_norm_modulated", x, scale, shift)
    axlar = (2, 3, 4)
    xhat_g, inv_std = _normera(x.data.reshape(n, groups, c // groups, h, w), axlar, eps)
    xhat = xhat_g.reshape(n, c, h, w)
    s = scale.data[:, :, None, None]
    y = xhat * s + shift.data[:, :, None, None]

    def bakåt(gy):
        gxhat = (gy * s).reshape(n, groups, c // groups, h, w)
        gx = _normera_bakåt(gxhat, xhat_g, inv_std, axlar).reshape(n, c, h, w)
        return gx, (gy * xhat).sum(axis=(2, 3)), gy.sum(axis=(2, 3))

    return _spela_in(tape, "group_norm_modulated", y, (x, scale, shift), bakåt)


def layer_norm_modulated(x: Tensor, scale: Tensor, shift: Tensor,
                         eps: float = 1e-6, tape: Optional[Tape] = None) -> Tensor:
    """Normering över kanalaxeln för varje cell (pixelvis), sedan y = x̂·scale + shift"""
    if x.data.ndim != 4:
        raise DimensionError(f"layer_norm_modulated: kräver [N, C, H, W], fick {x.shape}")
    _kontrollera_modulering("layer_norm_modulated", x, scale, shift)
    axlar = (1,)
    xhat, inv_std = _normera(x.data, axlar, eps)
    s = scale.data[:, :, None, None]
    y = xhat * s + shift.data[:, :, None, None]

    def bakåt(gy):
        gx = _normera_bakåt(gy * s, xhat, inv_std, axlar)
        return gx, (gy * xhat).sum(axis=(2, 3)), gy.sum(axis=(2, 3))

    return _spela_in(tape, "layer_norm_modulated", y, (x, scale, shift), bakåt)


def downsample_avg2(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """2×2-medelvärdespoolning"""
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"downsample_avg2: kräver jämna H och W, fick {x.shape}")
    n, c, h, w = x.shape
    y = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bakåt(gy):
        return (np.repeat(np.repeat(gy, 2, axis=2), 2, axis=3) * 0.25,)

    return _spela_in(tape, "downsample_avg2", y, (x,), bakåt)


def upsample_nearest2(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Närmaste-granne-uppsampling ×2"""
    if x.data.ndim != 4:
        raise DimensionError(f"upsample_nearest2: kräver [N, C, H, W], fick {x.shape}")
    n, c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bakåt(gy):
        return (gy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _spela_in(tape, "upsample_nearest2", y, (x,), bakåt)


def concat_channels(*xs: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Konkatenering längs kanalaxeln"""
    if len(xs) < 1:
        raise DimensionError("concat_channels: inga indata")
    xs = tuple(_som_tensor(x) for x in xs)
    bas = xs[0].shape
    for x in xs[1:]:
        if x.data.ndim != len(bas) or x.shape[:1] + x.shape[2:] != bas[:1] + bas[2:]:
            raise DimensionError(f"concat_channels: {x.shape} passar inte {bas}")
    y = np.concatenate([x.data for x in xs], axis=1)
    gränser = np.cumsum([x.shape[1] for x in xs])[:-1]

    def bakåt(gy):
        return tuple(np.split(gy, gränser, axis=1))

    return _spela_in(tape, "concat_channels", y, xs, bakåt)


def add(a, b, tape: Optional[Tape] = None) -> Tensor:
    """a + b med broadcasting; en ndarray behandlas som konstant"""
    a, b = _som_tensor(a), _som_tensor(b)
    try:
        y = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add: {a.shape} och {b.shape} går inte att addera") from e

    def bakåt(gy):
        return _unbroadcast(gy, a.shape), _unbroadcast(gy, b.shape)

    return _spela_in(tape, "add", y, (a, b), bakåt)


def scale(x: Tensor, c: Konstant, tape: Optional[Tape] = None) -> Tensor:
    """x · c där c är en konstant som broadcastas mot x"""
    c = np.asarray(c, dtype=x.dtype)
    y = x.data * c
    if y.shape != x.shape:
        raise DimensionError(f"scale: konstanten {c.shape} ändrar formen {x.shape}")

    def bakåt(gy):
        return (gy * c,)

    return _spela_in(tape, "scale", y, (x,), bakåt)


def pad(x: Tensor, top: int, bottom: int, left: int, right: int, tape: Optional[Tape] = None) -> Tensor:
    """Nollutfyllnad av de två sista axlarna"""
    if min(top, bottom, left, right) < 0:
        raise DimensionError("pad: negativ utfyllnad")
    y = np.pad(x.data, ((0, 0),) * (x.data.ndim - 2) + ((top, bottom), (left, right)))
    h, w = x.shape[-2:]

    def bakåt(gy):
        return (gy[..., top:top + h, left:left + w],)

    return _spela_in(tape, "pad", y, (x,), bakåt)


def crop(x: Tensor, top: int, bottom: int, left: int, right: int, tape: Optional[Tape] = None) -> Tensor:
    """Beskärning av de två sista axlarna"""
    h, w = x.shape[-2:]
    if min(top, bottom, left, right) < 0 or top + bottom >= h or left + right >= w:
        raise DimensionError(f"crop: ({top}, {bottom}, {left}, {right}) passar inte {x.shape}")
    y = x.data[..., top:h - bottom, left:w - right]

    def bakåt(gy):
        return (np.pad(gy, ((0, 0),) * (gy.ndim - 2) + ((top, bottom), (left, right))),)

    return _spela_in(tape, "crop", np.ascontiguousarray(y), (x,), bakåt)


def weighted_sq_mean(x: Tensor, weights: Konstant, tape: Optional[Tape] = None) -> Tensor:
    """Σ w·x² / (antal element / antal kanaler)

    Summerar över kanalaxeln (variabler) och tar medel över prov och celler.
    Vikterna broadcastas mot x, t.ex. [1, C, 1, 1].
    """
    if x.data.ndim < 2:
        raise DimensionError(f"weighted_sq_mean: kräver kanalaxel, fick {x.shape}")
    w = np.asarray(weights, dtype=x.dtype)
    try:
        wb = np.broadcast_to(w, x.shape)
    except ValueError as e:
        raise DimensionError(f"weighted_sq_mean: vikterna {w.shape} passar inte {x.shape}") from e
    nämnare = x.data.size / x.shape[1]
    y = np.asarray((wb * x.data * x.data).sum() / nämnare, dtype=x.dtype)

    def bakåt(gy):
        return (gy * 2.0 * wb * x.data / nämnare,)

    return _spela_in(tape, "weighted_sq_mean", y, (x,), bakåt)


def reduce_sum(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    y = np.asarray(x.data.sum(), dtype=x.dtype)

    def bakåt(gy):
        return (np.broadcast_to(gy, x.shape).copy(),)

    return _spela_in(tape, "reduce_sum", y, (x,), bakåt)


# ---------------------------------------------------------------------------
# Bakåtpass och gradientkontroll
# ---------------------------------------------------------------------------

def backward(tape: Tape, output: Tensor) -> Dict[str, np.ndarray]:
    """Baklängesderivering från en skalär

    Sätter .grad på alla lövtensorer med requires_grad (en gång per pass) och
    returnerar {namn: gradient} för de namngivna.
    """
    if output.data.size != 1:
        raise ContractError(f"backward kräver en skalär utdata, fick formen {output.shape}")
    grads: Dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    producerade = {id(n.output) for n in tape.nodes}
    löv: Dict[int, Tensor] = {}

    for nod in reversed(tape.nodes):
        gy = grads.pop(id(nod.output), None)
        if gy is None:
            continue
        delar = nod.backward(gy)
        for t, g in zip(nod.inputs, delar):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                raise DimensionError(f"{nod.op}: gradientformen {g.shape} matchar inte {t.shape}")
            nyckel = id(t)
            grads[nyckel] = grads[nyckel] + g if nyckel in grads else g
            if nyckel not in producerade:
                löv[nyckel] = t

    resultat = {}
    for nyckel, t in löv.items():
        t.grad = np.asarray(grads[nyckel], dtype=t.dtype)
        if t.name is not None:
            resultat[t.name] = t.grad
    return resultat


def grad_check(fn: Callable[[Optional[Tape]], Tensor],
               inputs: Sequence[Tensor],
               eps: float = 1e-5,
               n_samples: Optional[int] = None,
               rng: Optional[np.random.Generator] = None,
               floor: float = 1e-6) -> float:
    """Jämför baklängesgradienter med centrala differenser

    Args:
        fn: bygger den skalära utdatan; anropas med en Tape för det analytiska
            passet och med None för differenserna
        inputs: tensorer att kontrollera (requires_grad sätts)
        eps: differenssteg
        n_samples: antal slumpade element totalt (None = alla)
        rng: generator för urvalet
        floor: undre gräns för nämnaren i det relativa felet

    Returns:
        Största relativa felet |a − n| / max(|a|, |n|, floor)
    """
    for t in inputs:
        t.data = np.array(t.data, copy=True, order="C")
        t.requires_grad = True
        t.grad = None
    tape = Tape()
    ut = fn(tape)
    backward(tape, ut)
    analytiska = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    poster = [(i, j) for i, t in enumerate(inputs) for j in range(t.data.size)]
    if n_samples is not None and n_samples < len(poster):
        rng = rng if rng is not None else np.random.default_rng(0)
        valda = rng.choice(len(poster), size=n_samples, replace=False)
        poster = [poster[k] for k in sorted(valda)]

    värst = 0.0
    for i, j in poster:
        platt = inputs[i].data.reshape(-1)
        original = platt[j]
        platt[j] = original + eps
        plus = float(fn(None).data)
        platt[j] = original - eps
        minus = float(fn(None).data)
        platt[j] = original
        numerisk = (plus - minus) / (2.0 * eps)
        analytisk = float(analytiska[i].reshape(-1)[j])
        fel = abs(analytisk - numerisk) / max(abs(analytisk), abs(numerisk), floor)
        värst = max(värst, fel)
    logger.debug(f"grad_check: {len(poster)} element, största relativa fel {värst:.3g}")
    return värst
