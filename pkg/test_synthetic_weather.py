#!/usr/bin/env python3
"""
Testskript för den syntetiska toyatmosfären och datasetfilerna
"""

import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import RunConfig  # noqa: E402
from dataset_io import read_container, write_container  # noqa: E402
from errors import DataIOError, DomainError, EmptyInputError  # noqa: E402
from grid import GridSpec, residual_encode, standardize  # noqa: E402
from metrics import crps  # noqa: E402
from synthetic_weather import (  # noqa: E402
    Blob,
    Dataset,
    ToyWorldConfig,
    analytic_field,
    climatology_baseline,
    draw_toy_config,
    forcing_frame,
    generate_dataset,
    generate_trajectory,
    persistence_baseline,
    split_trajectories,
)

SPEC = GridSpec(width=12, height=12, boundary_width=2, variables=("theta", "u", "v"), level_weights=(1.0, 0.1, 0.1))


def liten_konfiguration(**ändringar) -> RunConfig:
    värden = dict(grid__width=12, grid__height=12, grid__boundary_width=2,
                  data__n_trajectories=10, data__n_steps=6)
    värden.update(ändringar)
    return RunConfig().with_overrides(**värden)


def en_blobb(ω=0.0, κ=0.0, A=0.0, brus=0.0) -> ToyWorldConfig:
    return ToyWorldConfig(spec=SPEC, rotation_rate=ω, diffusion=κ, diurnal_amplitude=A, diurnal_period=8,
                          annual_period=64, blobs=(Blob(x=7.5, y=4.0, width=2.0, amplitude=1.3),),
                          noise_std=brus, seed=5, index=0)


def test_konstant_fält_utan_dynamik():
    """Testar att κ=0, ω=0, A=0 ger ett fält som är konstant i tiden"""
    print("🔧 Testar statiskt fält...")
    traj = generate_trajectory(en_blobb(), 5)
    for t in range(1, 5):
        assert np.array_equal(traj.states[t], traj.states[0])
    print("✅ Fältet är konstant")


def test_rotationssymmetri():
    """Testar att fältet efter ett helt varv är lika med startfältet"""
    print("\n🔧 Testar rotationssymmetri...")
    config = en_blobb(ω=2 * math.pi / 48)
    y, x = np.meshgrid(np.arange(12.0), np.arange(12.0), indexing="ij")
    theta0, u0, v0 = analytic_field(config, x, y, 0.0)
    theta48, _, _ = analytic_field(config, x, y, 48.0)
    assert np.max(np.abs(theta48 - theta0)) < 1e-9
    xc, yc = config.center
    assert np.allclose(u0, -config.rotation_rate * (y - yc))
    assert np.allclose(v0, config.rotation_rate * (x - xc))
    with pytest.raises(DomainError):
        analytic_field(config, x, y, -1.0)
    print("✅ θ(48) = θ(0) inom 1e-9")


def test_blobbens_centrum():
    """Testar att blobbens centrum har blobbens amplitud vid t=0"""
    print("\n🔧 Testar blobbcentrum...")
    theta, _, _ = analytic_field(en_blobb(), 7.5, 4.0, 0.0)
    assert float(theta) == pytest.approx(1.3, abs=1e-12)
    theta_diff, _, _ = analytic_field(en_blobb(κ=0.5), 7.5, 4.0, 4.0)
    assert float(theta_diff) == pytest.approx(1.3 * 4.0 / (4.0 + 4.0), abs=1e-12)
    print("✅ Amplitud i centrum")


def test_brusfri_trajektoria_är_analytisk():
    """Testar att brusnivå 0 ger exakt det analytiska fältet"""
    print("\n🔧 Testar brusfri trajektoria...")
    config = en_blobb(ω=0.1, κ=0.05, A=0.2)
    traj = generate_trajectory(config, 4)
    y, x = np.meshgrid(np.arange(12.0), np.arange(12.0), indexing="ij")
    for t in range(4):
        assert np.array_equal(traj.states[t], np.stack(analytic_field(config, x, y, float(t))))
    brusig = generate_trajectory(en_blobb(ω=0.1, κ=0.05, A=0.2, brus=0.01), 4)
    assert not np.array_equal(brusig.states, traj.states)
    assert np.array_equal(brusig.states, generate_trajectory(en_blobb(ω=0.1, κ=0.05, A=0.2, brus=0.01), 4).states)
    print("✅ Identiskt med analytiskt fält")


def test_drivning():
    """Testar drivningskanalerna: enhetscirkel och strålning = max(0, sin)"""
    print("\n🔧 Testar drivning...")
    config = en_blobb()
    for t in range(-1, 10):
        f = forcing_frame(config, t)
        namn = list(f.names)
        sin_d = f.values[namn.index("sin_dygn")]
        assert np.allclose(f.values[namn.index("stralning")], np.maximum(0.0, sin_d))
        assert np.allclose(sin_d ** 2 + f.values[namn.index("cos_dygn")] ** 2, 1.0)
    print("✅ Drivning korrekt")


def test_datadelning():
    """Testar sammanhängande 70/10/20-delning"""
    print("\n🔧 Testar datadelning...")
    delning = split_trajectories(20, 0.1, 0.2)
    assert delning == {"train": [0, 14], "val": [14, 16], "test": [16, 20]}
    print(f"✅ {delning}")


def test_dragning_är_deterministisk():
    """Testar att samma frö och index ger samma toykonfiguration"""
    print("\n🔧 Testar dragning av toykonfiguration...")
    cfg = liten_konfiguration()
    a = draw_toy_config(cfg, SPEC, 2024, 3)
    b = draw_toy_config(cfg, SPEC, 2024, 3)
    c = draw_toy_config(cfg, SPEC, 2024, 4)
    assert a == b
    assert a != c
    assert ToyWorldConfig.from_dict(a.to_dict(), SPEC) == a
    print("✅ Deterministisk dragning")


def test_dataset_skrivs_och_läses_bitexakt():
    """Testar att datasetet skrivs och läses tillbaka byte för byte"""
    print("\n🔧 Testar datasetfil...")
    cfg = liten_konfiguration()
    ds = generate_dataset(cfg)
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a.bin", Path(tmp) / "b.bin"
        ds.save(a)
        igen = Dataset.load(a)
        assert np.array_equal(igen.states, ds.states)
        assert igen.header["config_hash"] == cfg.config_hash
        igen.save(b)
        assert a.read_bytes() == b.read_bytes()
        with pytest.raises(DataIOError):
            ds.save(a)
        generate_dataset(cfg).save(b, overwrite=True)
        assert a.read_bytes() == b.read_bytes()
    print("✅ Bitexakt")


def test_dataset_oberoende_av_parallellism():
    """Testar att n_jobs inte påverkar datasetet"""
    print("\n🔧 Testar parallell generering...")
    cfg = liten_konfiguration()
    assert np.array_equal(generate_dataset(cfg, n_jobs=1).states, generate_dataset(cfg, n_jobs=2).states)
    print("✅ Samma resultat med 1 och 2 jobb")


def test_behållare_avvisar_fel():
    """Testar att behållaren avvisar NaN, fel typ och trunkerade filer"""
    print("\n🔧 Testar filbehållare...")
    with tempfile.TemporaryDirectory() as tmp:
        fil = Path(tmp) / "x.bin"
        with pytest.raises(DataIOError):
            write_container(fil, {}, np.array([1.0, np.nan]), "dataset")
        write_container(fil, {"a": 1}, np.arange(6.0).reshape(2, 3), "dataset")
        header, array = read_container(fil, "dataset")
        assert header["a"] == 1 and array.shape == (2, 3)
        with pytest.raises(DataIOError):
            read_container(fil, "forecast")
        fil.write_bytes(fil.read_bytes()[:-4])
        with pytest.raises(DataIOError):
            read_container(fil)
    print("✅ Felaktiga filer avvisas")


def test_statistik_på_toydata():
    """Testar huvudets statistik mot en oberoende beräkning och residualernas skala"""
    print("\n🔧 Testar statistik på toydata...")
    ds = generate_dataset(liten_konfiguration())
    stats = ds.stats
    träning = ds.split_states("train")
    d = träning.shape[2]
    alla = träning.transpose(2, 0, 1, 3, 4).reshape(d, -1)
    for i in range(d):
        värden = alla[i]
        n = värden.size
        medel = sum(float(v) for v in värden) / n
        varians = sum((float(v) - medel) ** 2 for v in värden) / n
        assert stats.mean[i] == pytest.approx(medel, rel=1e-9, abs=1e-12)
        assert stats.std[i] == pytest.approx(math.sqrt(varians), rel=1e-9)
    assert np.all(stats.res_std < 1.0)

    z = standardize(träning, stats)
    r = residual_encode(z[:, :-1], z[:, 1:], stats)
    per_var = r.transpose(2, 0, 1, 3, 4).reshape(d, -1).std(axis=1)
    assert np.all((per_var > 0.9) & (per_var < 1.1))
    print(f"✅ σ_res = {np.round(stats.res_std, 4)}")


def test_baslinjer():
    """Testar persistens- och klimatologibaslinjerna"""
    print("\n🔧 Testar baslinjer...")
    ds = generate_dataset(liten_konfiguration())
    x0 = ds.state(0, 1)
    p = persistence_baseline(x0, 3)
    assert p.shape == (4,) + SPEC.shape
    assert np.sqrt(np.mean((p[0] - x0.values) ** 2)) == 0.0

    konstant = [np.full((5,) + SPEC.shape, 2.5), np.full((3,) + SPEC.shape, 2.5)]
    assert np.all(climatology_baseline(konstant) == 2.5)
    klimat = climatology_baseline(ds.split_states("train"))
    assert np.allclose(klimat, ds.split_states("train").mean(axis=(0, 1)))
    with pytest.raises(EmptyInputError):
        climatology_baseline([])

    sanning = ds.split_states("test")[:, 2]
    prognos = np.repeat(klimat[None, None], sanning.shape[0], axis=0)
    assert crps(prognos, sanning) == pytest.approx(np.mean(np.abs(prognos[:, 0] - sanning)), rel=1e-12)
    print("✅ Persistens och klimatologi")


def main():
    """Kör alla tester"""
    print("🧪 Startar tester för toyatmosfären\n")
    tests = [
        test_konstant_fält_utan_dynamik,
        test_rotationssymmetri,
        test_blobbens_centrum,
        test_brusfri_trajektoria_är_analytisk,
        test_drivning,
        test_datadelning,
        test_dragning_är_deterministisk,
        test_dataset_skrivs_och_läses_bitexakt,
        test_dataset_oberoende_av_parallellism,
        test_behållare_avvisar_fel,
        test_statistik_på_toydata,
        test_baslinjer,
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
