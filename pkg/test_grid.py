#!/usr/bin/env python3
"""
Testskript för rutnätsmodellen: indelning, normalisering, residualer och konditionering
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from errors import (  # noqa: E402
    BoundaryAccessError,
    ConfigError,
    DegenerateStatisticsError,
    DimensionError,
    MissingBoundaryError,
    MissingVariableError,
)
from grid import (  # noqa: E402
    BoundaryState,
    ForcingFrame,
    GridSpec,
    NormStats,
    RegionMask,
    StaticFields,
    WeatherState,
    assemble_conditioning,
    channel_names,
    compute_norm_stats,
    crop_interior,
    residual_decode,
    residual_encode,
    splice_interior,
    split_interior_boundary,
    stack_conditioning,
    standardize,
    unstandardize,
)

VARIABLER = ("theta", "u", "v")
VIKTER = (1.0, 0.1, 0.1)
DRIVNING = ("sin_dygn", "cos_dygn", "stralning")
STATISKA = ("topografi", "x_koord", "y_koord", "randmask", "innermask")


def liten_spec(storlek: int = 8, b: int = 2) -> GridSpec:
    return GridSpec(width=storlek, height=storlek, boundary_width=b, variables=VARIABLER, level_weights=VIKTER)


def drivning(spec: GridSpec, t: float) -> ForcingFrame:
    vinkel = 2 * np.pi * t / 8
    kanaler = [np.sin(vinkel), np.cos(vinkel), max(0.0, np.sin(vinkel))]
    return ForcingFrame(np.stack([np.full((spec.height, spec.width), k) for k in kanaler]), DRIVNING)


def statiska(spec: GridSpec) -> StaticFields:
    return StaticFields.build(spec, np.zeros((spec.height, spec.width)), STATISKA)


def slumpstats(rng, d: int = 3) -> NormStats:
    return NormStats(VARIABLER[:d], rng.normal(size=d), rng.uniform(0.5, 2.0, d),
                     rng.normal(scale=0.1, size=d), rng.uniform(0.1, 0.5, d))


def test_indelning_8x8():
    """Testar att 8×8 med b=2 ger 16 innerceller och 48 randceller"""
    print("🔧 Testar indelning av 8×8-rutnät...")
    spec = liten_spec()
    mask = RegionMask.from_spec(spec)
    assert mask.n_interior == 16
    assert mask.n_boundary == 48
    assert not np.any(mask.interior & mask.boundary)
    assert np.all(mask.interior | mask.boundary)
    assert spec.interior_shape == (3, 4, 4)
    assert np.array_equal(spec.mask.boundary, RegionMask.from_spec(spec).boundary)
    print("✅ 16 inre + 48 rand")


def test_stort_rutnät_och_ogiltig_rand():
    """Testar rutnätsstorleken 238×268 med b=10 och avvisning utan inre område"""
    print("\n🔧 Testar stort rutnät...")
    spec = GridSpec(width=268, height=238, boundary_width=10, variables=VARIABLER, level_weights=VIKTER)
    assert spec.interior_hw == (218, 248)
    with pytest.raises(ConfigError):
        GridSpec(width=8, height=8, boundary_width=4, variables=VARIABLER, level_weights=VIKTER)
    with pytest.raises(ConfigError):
        GridSpec(width=8, height=8, boundary_width=2, variables=VARIABLER, level_weights=(1.0, 0.0, 0.1))
    assert GridSpec.from_dict(spec.to_dict()) == spec
    print("✅ 218×248 inre celler, b = W/2 avvisas")


def test_dela_och_skarva():
    """Testar att delning och skarvning återskapar fältet exakt"""
    print("\n🔧 Testar delning och skarvning...")
    spec = liten_spec()
    rng = np.random.default_rng(0)
    x = WeatherState(rng.normal(size=spec.shape))
    inre, rand = split_interior_boundary(x, spec)
    assert inre.shape == (3, 4, 4)
    assert rand.shape == (3, 48)
    full = splice_interior(inre, x.values, spec)
    assert np.array_equal(full, x.values)
    nytt = splice_interior(np.zeros((3, 4, 4)), x.values, spec)
    assert np.array_equal(nytt[:, spec.mask.boundary], x.values[:, spec.mask.boundary])
    assert np.all(crop_interior(nytt, spec) == 0.0)
    with pytest.raises(DimensionError):
        split_interior_boundary(np.zeros((3, 7, 8)), spec)
    print("✅ Delning och skarvning exakt")


def test_tillstånd_avvisar_nan():
    """Testar att WeatherState avvisar NaN och att BoundaryState kräver ändliga randceller"""
    print("\n🔧 Testar tillståndsvalidering...")
    spec = liten_spec()
    värden = np.ones(spec.shape)
    värden[0, 3, 3] = np.nan
    with pytest.raises(DimensionError):
        WeatherState(värden)
    rand = BoundaryState.from_state(WeatherState(np.ones(spec.shape)), spec)
    assert np.all(np.isnan(rand.values[:, 2:6, 2:6]))
    rand.check(spec)
    trasig = np.array(rand.values)
    trasig[1, 0, 0] = np.nan
    with pytest.raises(MissingBoundaryError):
        BoundaryState(trasig).check(spec)
    print("✅ NaN hanteras enligt kontraktet")


def test_drivning_enhetscirkel():
    """Testar att sin/cos-par måste ligga på enhetscirkeln"""
    print("\n🔧 Testar drivningsfält...")
    spec = liten_spec()
    drivning(spec, 3)
    fel = np.ones((3, spec.height, spec.width))
    with pytest.raises(DimensionError):
        ForcingFrame(fel, DRIVNING)
    print("✅ Enhetscirkeln kontrolleras")


def test_normstats_populationskonvention():
    """Testar μ = 2 och σ = 1 för data {1, 3} och noll residualvarians"""
    print("\n🔧 Testar normaliseringsstatistik...")
    upp = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    stats = compute_norm_stats([upp, upp[::-1]], ("theta",))
    assert stats.mean[0] == pytest.approx(2.0)
    assert stats.std[0] == pytest.approx(1.0)

    konstant = np.ones((4, 1, 2, 2))
    konstant[:, :, 0, 0] = 2.0
    with pytest.raises(DegenerateStatisticsError):
        compute_norm_stats([konstant], ("theta",))
    with pytest.raises(DegenerateStatisticsError):
        compute_norm_stats([np.ones((3, 1, 2, 2))], ("theta",))
    print("✅ μ=2, σ=1, konstant variabel avvisas")


def test_normstats_standardiserar_träningsdata():
    """Testar att standardiserade träningsdata får medel 0 och std 1"""
    print("\n🔧 Testar standardisering av träningsdata...")
    rng = np.random.default_rng(3)
    trajektorier = rng.normal(loc=[5.0, -1.0, 0.3], scale=[2.0, 0.5, 0.1], size=(4, 6, 5, 5, 3)).transpose(0, 1, 4, 2, 3)
    stats = compute_norm_stats(trajektorier, VARIABLER)
    z = standardize(trajektorier, stats)
    per_var = z.transpose(2, 0, 1, 3, 4).reshape(3, -1)
    assert np.allclose(per_var.mean(axis=1), 0.0, atol=1e-6)
    assert np.allclose(per_var.std(axis=1), 1.0, atol=1e-6)

    diff = (z[:, 1:] - z[:, :-1]).transpose(2, 0, 1, 3, 4).reshape(3, -1)
    assert np.allclose(stats.res_mean, diff.mean(axis=1), atol=1e-12)
    assert np.allclose(stats.res_std, diff.std(axis=1), atol=1e-12)
    assert NormStats.from_dict(stats.to_dict()).to_dict() == stats.to_dict()
    print("✅ Medel 0 och std 1 per variabel")


def test_standardisering_inverterbar():
    """Testar μ → 0, μ+σ → 1 och att unstandardize inverterar"""
    print("\n🔧 Testar standardize/unstandardize...")
    rng = np.random.default_rng(1)
    stats = slumpstats(rng)
    spec = liten_spec()
    x = np.broadcast_to(stats.mean[:, None, None], spec.shape)
    assert np.allclose(standardize(x, stats), 0.0)
    assert np.allclose(standardize(x + stats.std[:, None, None], stats), 1.0)
    y = rng.normal(size=spec.shape) * 10
    assert np.allclose(unstandardize(standardize(y, stats), stats), y, rtol=1e-12, atol=1e-12)
    with pytest.raises(MissingVariableError):
        standardize(y, stats, ("theta", "u", "q"))
    print("✅ Standardisering inverterbar")


def test_residualkodning():
    """Testar att residualkodningen är noll för oförändrat tillstånd och inverterbar"""
    print("\n🔧 Testar residualkodning...")
    rng = np.random.default_rng(2)
    stats = NormStats(VARIABLER, np.zeros(3), np.ones(3), np.zeros(3), np.full(3, 0.2))
    a = rng.normal(size=(3, 4, 4))
    assert np.all(residual_encode(a, a, stats) == 0.0)
    stats = slumpstats(rng)
    b = rng.normal(size=(3, 4, 4))
    r = residual_encode(a, b, stats)
    assert np.allclose(residual_decode(r, a, stats), b, rtol=1e-12, atol=1e-12)
    with pytest.raises(DimensionError):
        residual_encode(a, b[:, :2], stats)
    print("✅ decode(encode(a, b)) = b")


def _par(spec, stats, rng, framtid=True, no_future=False):
    x_prev = WeatherState(rng.normal(size=spec.shape))
    x_cur = WeatherState(rng.normal(size=spec.shape))
    x_next = BoundaryState.from_state(WeatherState(rng.normal(size=spec.shape)), spec) if framtid else None
    return assemble_conditioning(x_prev, x_cur, x_next, [drivning(spec, t) for t in (0, 1, 2)],
                                 statiska(spec), spec, stats, no_future=no_future), x_cur


def test_konditionering_kanaler_och_åtkomst():
    """Testar kanalantal, NaN i B^t:s innerceller och åtkomstskyddet"""
    print("\n🔧 Testar konditionering...")
    spec = liten_spec()
    rng = np.random.default_rng(4)
    stats = slumpstats(rng)
    par, _ = _par(spec, stats, rng)
    d, d_f, d_s = 3, len(DRIVNING), len(STATISKA)
    assert par.interior.shape == (2 * d + 3 * d_f + d_s, 4, 4)
    assert par.boundary.shape == (3 * d + 3 * d_f + d_s, 8, 8)
    assert len(par.interior_channels) == par.interior.shape[0]
    assert par.boundary_channels[:3] == ("theta@t-1", "u@t-1", "v@t-1")
    assert np.all(np.isnan(par.boundary[:, 2:6, 2:6]))
    assert np.all(np.isfinite(par.boundary[:, spec.mask.boundary]))
    assert np.all(np.isfinite(par.boundary_tensor()))

    par.boundary_at(0, 0, 0)
    par.interior_at(0, 3, 3)
    with pytest.raises(BoundaryAccessError):
        par.boundary_at(0, 3, 3)
    with pytest.raises(BoundaryAccessError):
        par.interior_at(0, 0, 5)

    inre, rand = stack_conditioning([par, par])
    assert inre.shape == (2,) + par.interior.shape
    assert rand.shape == (2,) + par.boundary.shape
    assert channel_names(spec, DRIVNING, STATISKA) == (par.interior_channels, par.boundary_channels)
    print(f"✅ I^t {par.interior.shape[0]} kanaler, B^t {par.boundary.shape[0]} kanaler")


def test_konditionering_utan_framtida_rand():
    """Testar att saknad X_B^{t+1} är ett fel utom i no-future-läget där X^t används"""
    print("\n🔧 Testar konditionering utan framtida rand...")
    spec = liten_spec()
    rng = np.random.default_rng(5)
    stats = slumpstats(rng)
    with pytest.raises(MissingBoundaryError):
        _par(spec, stats, np.random.default_rng(6), framtid=False)
    par, x_cur = _par(spec, stats, np.random.default_rng(6), framtid=False, no_future=True)
    z_cur = standardize(x_cur.values, stats)
    mask = spec.mask.boundary
    assert np.allclose(par.boundary[6:9][:, mask], z_cur[:, mask])
    assert np.allclose(par.boundary[3:6][:, mask], z_cur[:, mask])
    print("✅ Persistens ersätter framtida rand")


def main():
    """Kör alla tester"""
    print("🧪 Startar tester för rutnätsmodellen\n")
    tests = [
        test_indelning_8x8,
        test_stort_rutnät_och_ogiltig_rand,
        test_dela_och_skarva,
        test_tillstånd_avvisar_nan,
        test_drivning_enhetscirkel,
        test_normstats_populationskonvention,
        test_normstats_standardiserar_träningsdata,
        test_standardisering_inverterbar,
        test_residualkodning,
        test_konditionering_kanaler_och_åtkomst,
        test_konditionering_utan_framtida_rand,
    ]
    passed = 0
    for test in tests:
        try:
            test()
            passed += 1
        except Exception as e:
            print(f"❌ Testet {test.__name__} misslyckades: {e}")
    print(f"\n📊 Testresultat: {passed}/{len(tests)} tester godkända")
    return passed == len(tests)


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
