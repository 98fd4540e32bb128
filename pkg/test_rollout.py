#!/usr/bin/env python3
"""
Testskript för den autoregressiva ensembleprognosen och randleverantörerna
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import RunConfig  # noqa: E402
from denoisers import AnalyticGaussianDenoiser, CondDenoiserNet  # noqa: E402
from edm import NoiseSchedule, Preconditioner  # noqa: E402
from errors import ContractError, MissingBoundaryError  # noqa: E402
from rng import member_stream  # noqa: E402
from rollout import (  # noqa: E402
    Forecaster,
    NoFutureBoundary,
    TruthBoundary,
    ensemble_forecast,
    forecast_split,
    forecast_step,
    make_provider,
    rollout,
)
from synthetic_weather import generate_dataset  # noqa: E402

KONFIG = RunConfig().with_overrides(grid__width=12, grid__height=12, grid__boundary_width=2,
                                    data__n_trajectories=10, data__n_steps=6,
                                    model__latent_width=4, model__unet_widths=[4, 8], model__embed_width=8,
                                    model__fourier_frequencies=4, model__max_groups=2)
DATASET = generate_dataset(KONFIG)
SPEC = DATASET.spec


class Inspelare(AnalyticGaussianDenoiser):
    """Analytiskt orakel som sparar randindata vid varje anrop"""

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.randindata = []

    def raw_forward(self, scaled_latent, c_noise, cond=None, tape=None):
        self.randindata.append(np.array(cond.boundary))
        return super().raw_forward(scaled_latent, c_noise, cond, tape)


def prognosmakare(denoiser=None) -> Forecaster:
    if denoiser is None:
        denoiser = AnalyticGaussianDenoiser(mean=np.zeros(SPEC.interior_shape), var=1.0)
    return Forecaster(denoiser, DATASET.stats, SPEC, NoiseSchedule.from_config(KONFIG),
                      Preconditioner(KONFIG["schedule.sigma_data"]), DATASET.statics)


def randceller(x: np.ndarray) -> np.ndarray:
    return x[..., SPEC.mask.boundary]


def test_randen_är_bitexakt():
    """Testar att randcellerna i varje ledtid är exakt leverantörens värden"""
    print("🔧 Testar randceller...")
    test = DATASET.split("test")
    for rand in ("truth", "no-future"):
        prognos, _ = forecast_split(prognosmakare(), DATASET, test, init_index=1, steps=3, n_ens=2,
                                    master_seed=11, boundary_kind=rand)
        assert prognos.shape == (len(test), 2, 3) + SPEC.shape
        for s, i in enumerate(test):
            for k in range(3):
                sanning = DATASET.trajectory(i)[1 + k + 1]
                for m in range(2):
                    assert np.array_equal(randceller(prognos[s, m, k]), randceller(sanning))
        assert np.all(np.isfinite(prognos))
        assert not np.array_equal(prognos[:, 0], prognos[:, 1])
    print("✅ Randen kopieras exakt för båda leverantörerna")


def test_determinism_och_parallellism():
    """Testar att samma frö ger samma ensemble oavsett n_jobs och ensemblestorlek"""
    print("\n🔧 Testar determinism...")
    f = prognosmakare()
    test = DATASET.split("test")
    a, nycklar = forecast_split(f, DATASET, test, 1, 2, 3, master_seed=5, n_jobs=1)
    b, _ = forecast_split(f, DATASET, test, 1, 2, 3, master_seed=5, n_jobs=2)
    c, _ = forecast_split(f, DATASET, test, 1, 2, 2, master_seed=5)
    d, _ = forecast_split(f, DATASET, test, 1, 2, 3, master_seed=6)
    assert np.array_equal(a, b)
    assert np.array_equal(a[:, :2], c)
    assert not np.array_equal(a, d)
    assert nycklar[1][2] == [5, 2, 1, 2]
    print("✅ Bitidentiskt med 1 och 2 jobb")


def test_ensemble_med_nätverk():
    """Testar en kort ensemble med det otränade nätverket"""
    print("\n🔧 Testar ensemble med nätverk...")
    net = CondDenoiserNet.from_config(KONFIG, SPEC, len(DATASET.forcing_names), len(DATASET.statics.names))
    f = prognosmakare(net)
    lev = make_provider("truth", DATASET, 8, 1)
    ens = ensemble_forecast(f, lev.state(-1), lev.state(0), lev, steps=2, n_ens=2, master_seed=3, sample=0)
    assert ens.members.shape == (2, 2) + SPEC.shape
    assert ens.n_ens == 2 and ens.lead_times == [1, 2]
    assert ens.provider_kind == "truth"
    assert ens.member_seeds == [(3, 2, 0, 0), (3, 2, 0, 1)]
    assert ens.schedule["num_steps"] == 20
    assert np.array_equal(randceller(ens.members[1, 1]), randceller(DATASET.trajectory(8)[3]))
    assert np.all(np.isfinite(ens.members))
    print(f"✅ Ensemble {ens.members.shape} på {ens.wall_time:.2f} s")


def test_utan_framtida_rand():
    """Testar att no-future ersätter X_B^{t+1} med persistensen X_B^t i indata"""
    print("\n🔧 Testar leverantör utan framtida rand...")
    d = SPEC.num_vars
    orakel_sanning = Inspelare(mean=np.zeros(SPEC.interior_shape), var=1.0)
    orakel_utan = Inspelare(mean=np.zeros(SPEC.interior_shape), var=1.0)
    sanning = TruthBoundary.from_dataset(DATASET, 8, 1)
    utan = NoFutureBoundary.from_dataset(DATASET, 8, 1)
    assert utan.future_boundary(1) is None

    a = rollout(prognosmakare(orakel_sanning), sanning.state(-1), sanning.state(0), sanning, 2,
                lambda lead: member_stream(1, 0, 0, lead))
    b = rollout(prognosmakare(orakel_utan), utan.state(-1), utan.state(0), utan, 2,
                lambda lead: member_stream(1, 0, 0, lead))
    assert np.array_equal(a[0].values, b[0].values)

    mask = SPEC.mask.boundary
    for B in orakel_utan.randindata:
        assert np.array_equal(B[0, 2 * d:3 * d][:, mask], B[0, d:2 * d][:, mask])
    B = orakel_sanning.randindata[0]
    assert not np.array_equal(B[0, 2 * d:3 * d][:, mask], B[0, d:2 * d][:, mask])
    print("✅ Persistens används som framtida rand")


def test_lärarstyrd_körning():
    """Testar att lärarstyrd körning matar in sanna tillstånd i varje steg"""
    print("\n🔧 Testar lärarstyrd körning...")
    f = prognosmakare()
    lev = TruthBoundary.from_dataset(DATASET, 9, 1)

    def ström(lead):
        return member_stream(7, 0, 0, lead)

    styrd = rollout(f, lev.state(-1), lev.state(0), lev, 3, ström, teacher_forced=True)
    for k in range(3):
        ett_steg = forecast_step(f, lev.state(k - 1), lev.state(k), lev, ström(k + 1))
        assert np.array_equal(styrd[k].values, ett_steg.values)
        assert styrd[k].lead_time == k + 1
    fri = rollout(f, lev.state(-1), lev.state(0), lev, 3, ström)
    assert np.array_equal(fri[0].values, styrd[0].values)
    assert not np.array_equal(fri[2].values, styrd[2].values)
    print("✅ Varje steg startar från sanningen")


def test_fel_vid_saknad_rand_och_kontrakt():
    """Testar fel när randdata saknas och när anropen bryter kontrakten"""
    print("\n🔧 Testar fel...")
    f = prognosmakare()
    with pytest.raises(MissingBoundaryError):
        forecast_split(f, DATASET, DATASET.split("test"), init_index=1, steps=5, n_ens=1, master_seed=0)
    forecast_split(f, DATASET, [8], init_index=1, steps=4, n_ens=1, master_seed=0)
    lev = make_provider("truth", DATASET, 8, 3)
    with pytest.raises(MissingBoundaryError, match="ledtid 3"):
        rollout(f, lev.state(-1), lev.state(0), lev, 3, member_stream(0, 0, 0, 1))
    with pytest.raises(ContractError):
        make_provider("truth", DATASET, 8, 0)
    with pytest.raises(ContractError):
        make_provider("perfekt", DATASET, 8, 1)
    with pytest.raises(ContractError):
        rollout(f, lev.state(-1), lev.state(0), lev, 0, member_stream(0, 0, 0, 1))
    with pytest.raises(ContractError):
        ensemble_forecast(f, lev.state(-1), lev.state(0), lev, 1, 0, master_seed=0)
    print("✅ Felen upptäcks")


def main():
    """Kör alla tester"""
    print("🧪 Startar tester för ensembleprognosen\n")
    tests = [
        test_randen_är_bitexakt,
        test_determinism_och_parallellism,
        test_ensemble_med_nätverk,
        test_utan_framtida_rand,
        test_lärarstyrd_körning,
        test_fel_vid_saknad_rand_och_kontrakt,
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
