#!/usr/bin/env python3
"""
Testskript för kommandoraden: hela kedjan på ett litet rutnät, felkoder och diagram
"""

import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from checkpoint import load_checkpoint  # noqa: E402
from config import REGISTER  # noqa: E402
from dataset_io import read_container  # noqa: E402
from metrics import AGGREGAT, read_metrics_csv  # noqa: E402
from randprognos import cli  # noqa: E402
from run_pipeline import PipelineRunner  # noqa: E402

LITEN_KONFIGURATION = """\
grid.width = 12
grid.height = 12
grid.boundary_width = 2
data.n_trajectories = 10
data.n_steps = 6
model.latent_width = 4
model.unet_widths = 4, 8
model.embed_width = 8
model.fourier_frequencies = 4
model.max_groups = 2
train.stage_epochs = 1, 1
train.stage_lrs = 0.001, 0.0001
train.val_samples = 4
rollout.n_ens = 2
rollout.steps = 3
"""


def kör(*argument):
    """Kör CLI:t utan loggfil"""
    return CliRunner().invoke(cli, ["--log-file", "", "--log-level", "WARNING", *[str(a) for a in argument]])


def skriv_konfiguration(katalog: Path, text: str = LITEN_KONFIGURATION) -> Path:
    fil = katalog / "liten.cfg"
    fil.write_text(text, encoding="utf-8")
    return fil


def lyckat(resultat):
    assert resultat.exit_code == 0, f"exitkod {resultat.exit_code}: {resultat.output}"
    return resultat


def test_visa_konfiguration():
    """Testar show-config med och utan konfigurationsfil"""
    print("🔧 Testar show-config...")
    rader = lyckat(kör("show-config")).output.strip().splitlines()
    assert len(rader) == len(REGISTER)
    with tempfile.TemporaryDirectory() as tmp:
        fil = skriv_konfiguration(Path(tmp))
        utdata = lyckat(kör("show-config", "--config", fil)).output
    assert "grid.width = 12" in utdata
    assert "# config_hash = " in utdata
    print(f"✅ {len(rader)} nycklar")


def test_hela_kedjan():
    """Testar gen-data, stats, train, forecast, evaluate och report på ett litet rutnät"""
    print("\n🔧 Testar hela kedjan...")
    with tempfile.TemporaryDirectory() as tmp:
        k = Path(tmp)
        cfg = skriv_konfiguration(k)
        data, stats, ckpt = k / "dataset.bin", k / "stats.json", k / "model.ckpt"

        lyckat(kör("gen-data", "--config", cfg, "--out", data))
        lyckat(kör("stats", "--data", data, "--out", stats))
        innehåll = json.loads(stats.read_text(encoding="utf-8"))
        assert set(innehåll) == {"stats", "dataset_hash", "config_hash"}

        lyckat(kör("train", "--config", cfg, "--data", data, "--stats", stats, "--out-checkpoint", ckpt,
                   "--log-csv", k / "train_log.csv"))
        ck = load_checkpoint(ckpt)
        assert ck.progress["epoch"] == 2 and len(ck.progress["history"]) == 3
        assert ck.step == 8

        prognos = k / "forecast.bin"
        lyckat(kör("forecast", "--checkpoint", ckpt, "--data", data, "--out", prognos))
        header, medlemmar = read_container(prognos, "forecast")
        assert medlemmar.shape == (2, 2, 3, 3, 12, 12)
        assert header["lead_times"] == [1, 2, 3] and header["n_ens"] == 2
        assert header["trajectories"] == [8, 9] and header["boundary"] == "truth"
        assert header["member_seeds"][1][0] == [11, 2, 1, 0]
        assert header["checkpoint_hash"] == ck.file_hash

        for namn in ("a.csv", "b.csv"):
            lyckat(kör("evaluate", "--forecasts", prognos, "--data", data, "--stats", stats,
                       "--config", cfg, "--out-csv", k / namn))
        assert (k / "a.csv").read_bytes() == (k / "b.csv").read_bytes()
        rader = read_metrics_csv(k / "a.csv")
        assert len(rader) == 4 * 3
        assert all(r["n_ens"] == 2 for r in rader)

        for baslinje in ("persistence", "climatology"):
            lyckat(kör("evaluate", "--baseline", baslinje, "--data", data, "--stats", stats,
                       "--config", cfg, "--out-csv", k / f"{baslinje}.csv"))
        persistens = read_metrics_csv(k / "persistence.csv")
        assert all(r["spread"] is None and r["n_ens"] == 1 for r in persistens)

        tabeller = [a for n in ("a", "persistence", "climatology") for a in ("--csv", k / f"{n}.csv")]
        utdata = lyckat(kör("report", *tabeller, "--out-dir", k / "plots")).output
        svg = sorted(p.name for p in (k / "plots").glob("*.svg"))
        assert svg == ["crps.svg", "rmse.svg", "spread.svg", "ssr.svg"]
        assert len(utdata.strip().splitlines()) == 4
        lyckat(kör("report", *tabeller, "--out-dir", k / "plots2", "--timestep-hours", 3))
        lyckat(kör("report", *tabeller, "--out-dir", k / "plots3", "--timestep-hours", 3))
        for namn in svg:
            innehåll = (k / "plots2" / namn).read_bytes()
            assert innehåll.startswith(b"<?xml")
            assert innehåll == (k / "plots3" / namn).read_bytes()
    print("✅ Kedjan körd, tabellen bitidentisk")


def test_återupptagen_träning_via_kommandoraden():
    """Testar att --until-epoch följt av --resume ger samma parametrar som en hel körning"""
    print("\n🔧 Testar återupptagning via kommandoraden...")
    with tempfile.TemporaryDirectory() as tmp:
        k = Path(tmp)
        cfg = skriv_konfiguration(k)
        data = k / "dataset.bin"
        lyckat(kör("gen-data", "--config", cfg, "--out", data))
        lyckat(kör("train", "--config", cfg, "--data", data, "--out-checkpoint", k / "hel.ckpt"))
        lyckat(kör("train", "--config", cfg, "--data", data, "--out-checkpoint", k / "del.ckpt",
                   "--until-epoch", 1))
        lyckat(kör("train", "--config", cfg, "--data", data, "--out-checkpoint", k / "del.ckpt",
                   "--resume", k / "del.ckpt"))
        hel, delad = load_checkpoint(k / "hel.ckpt"), load_checkpoint(k / "del.ckpt")
        assert delad.progress["epoch"] == 2 and delad.step == hel.step
        for namn, p in hel.net.params.items():
            assert np.array_equal(p.data, delad.net.params[namn].data), namn

        annan = skriv_konfiguration(k, LITEN_KONFIGURATION.replace("train.val_samples = 4", "train.val_samples = 3"))
        resultat = kör("train", "--config", annan, "--data", data, "--out-checkpoint", k / "ny.ckpt",
                       "--resume", k / "del.ckpt")
        assert resultat.exit_code == 2
        assert "ERROR:CONFIG:" in resultat.output
    print("✅ Bitidentiskt efter återupptagning")


def test_felkoder():
    """Testar felprefix och exitkoder"""
    print("\n🔧 Testar felkoder...")
    with tempfile.TemporaryDirectory() as tmp:
        k = Path(tmp)
        cfg = skriv_konfiguration(k)
        data = k / "dataset.bin"
        lyckat(kör("gen-data", "--config", cfg, "--out", data))

        resultat = kör("gen-data", "--config", cfg, "--out", data)
        assert resultat.exit_code == 3 and "ERROR:IO:" in resultat.output

        fel = skriv_konfiguration(k, "grid.depth = 3\n")
        resultat = kör("gen-data", "--config", fel, "--out", k / "x.bin")
        assert resultat.exit_code == 2 and "ERROR:CONFIG:" in resultat.output
        assert "grid.depth" in resultat.output

        resultat = kör("evaluate", "--data", data, "--out-csv", k / "m.csv")
        assert resultat.exit_code == 2 and "ERROR:CONFIG:" in resultat.output

        resultat = kör("evaluate", "--baseline", "persistence", "--data", data, "--steps", 5,
                       "--out-csv", k / "m.csv")
        assert resultat.exit_code == 3 and "ERROR:IO:" in resultat.output

        resultat = kör("train", "--data", data, "--stats", k / "saknas.json", "--out-checkpoint", k / "m.ckpt")
        assert resultat.exit_code == 2
    print("✅ Felen rapporteras med kod och prefix")


def test_körning_av_kedjan():
    """Testar PipelineRunner med en kort träning"""
    print("\n🔧 Testar kedjekörning...")
    with tempfile.TemporaryDirectory() as tmp:
        k = Path(tmp)
        cfg = skriv_konfiguration(k)
        runner = PipelineRunner(k / "korning", str(cfg), until_epoch=1)
        assert runner.run(), runner.error_message
        for namn in ("truth", "no-future", "persistence", "climatology"):
            rader = read_metrics_csv(k / "korning" / f"metrics_{namn}.csv")
            assert any(r["variable"] == AGGREGAT for r in rader)
        assert len(list((k / "korning" / "plots").glob("*.svg"))) == 4
        assert len(runner.tider) == len(runner.steg())

        igen = PipelineRunner(k / "korning", str(cfg), until_epoch=1)
        assert not igen.run()
        assert "gen-data" in igen.error_message
    print("✅ Kedjan körd och avbruten vid befintliga filer")


@pytest.mark.slow
def test_toykonfiguration_hela_vägen():
    """Testar hela kedjan med toy.cfg mot baslinjerna och randvarianterna (långsamt)"""
    print("\n🔧 Testar toykonfigurationen...")
    toy = Path(os.path.dirname(os.path.abspath(__file__))) / "toy.cfg"
    with tempfile.TemporaryDirectory() as tmp:
        katalog = Path(tmp) / "korning"
        runner = PipelineRunner(katalog, str(toy), n_jobs=2)
        assert runner.run(), runner.error_message

        def aggregat(namn):
            rader = read_metrics_csv(katalog / f"metrics_{namn}.csv")
            return {r["lead_steps"]: r for r in rader if r["variable"] == AGGREGAT}

        sanning, utan = aggregat("truth"), aggregat("no-future")
        persistens, klimat = aggregat("persistence"), aggregat("climatology")
        assert sorted(sanning) == list(range(1, 20))
        assert sanning[1]["rmse"] < persistens[1]["rmse"]
        assert sanning[1]["crps"] < klimat[1]["crps"]
        sen_sanning = np.mean([sanning[k]["rmse"] for k in range(10, 20)])
        sen_utan = np.mean([utan[k]["rmse"] for k in range(10, 20)])
        assert sen_sanning < sen_utan
        assert sanning[1]["ssr"] is not None and sanning[1]["ssr"] > 0.0

        for rand in ("truth", "no-future"):
            header, medlemmar = read_container(katalog / f"forecast_{rand}.bin", "forecast")
            assert header["lead_times"] == list(range(1, 20)) and header["n_ens"] == 5
            assert np.all(np.isfinite(medlemmar))
    print(f"✅ RMSE {sanning[1]['rmse']:.4f} < persistens {persistens[1]['rmse']:.4f}, "
          f"CRPS {sanning[1]['crps']:.4f} < klimatologi {klimat[1]['crps']:.4f}, "
          f"ledtid 10–19: {sen_sanning:.4f} < {sen_utan:.4f}")


def main():
    """Kör alla tester"""
    logging.basicConfig(level=logging.WARNING)
    print("🧪 Startar tester för kommandoraden\n")
    tests = [
        test_visa_konfiguration,
        test_hela_kedjan,
        test_återupptagen_träning_via_kommandoraden,
        test_felkoder,
        test_körning_av_kedjan,
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
