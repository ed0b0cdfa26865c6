import json
import subprocess
import sys
from pathlib import Path

import pytest

from deepshading.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def tiny_config(tmp_path, **kw):
    d = json.loads((CONFIGS / "ao_desk.json").read_text())
    d["net"].update(levels=2, u0=4)
    d.update(iterations=4, batch_size=2, crop_size=16, validation_every=2)
    d.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    return path


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "data"
    assert main(["gen", "--scenes", "2", "--views", "4", "--size", "16", "--spp", "4",
                 "--seed", "1", "--out", str(out)]) == 0
    return out


def test_params_prints_count(capsys):
    assert main(["params", "--config", str(CONFIGS / "ao.json")]) == 0
    assert capsys.readouterr().out.strip() == "71089"
    assert main(["params", "--preset", "DoF"]) == 0
    assert capsys.readouterr().out.strip() == "33553"


def test_gen_counts_and_splits(generated):
    m = json.loads((generated / "manifest.json").read_text())
    assert len(m["records"]) == 8
    assert all(i.startswith("s001") for i in m["splits"]["test"])
    assert len(m["splits"]["test"]) == 4 and len(m["splits"]["validation"]) >= 1


def test_gen_is_byte_reproducible(generated, tmp_path):
    again = tmp_path / "again"
    assert main(["gen", "--scenes", "2", "--views", "4", "--size", "16", "--spp", "4",
                 "--seed", "1", "--jobs", "2", "--out", str(again)]) == 0
    files = sorted(p.relative_to(generated) for p in generated.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
    for f in files:
        assert (generated / f).read_bytes() == (again / f).read_bytes()


def test_augment_multiplies_by_eight(generated, tmp_path, capsys):
    assert main(["augment", "--in", str(generated), "--out", str(tmp_path / "aug")]) == 0
    m = json.loads((tmp_path / "aug" / "manifest.json").read_text())
    assert len(m["records"]) == 64
    assert len(m["splits"]["test"]) == 32
    assert "records=64" in capsys.readouterr().out


def test_train_eval_infer_bench(generated, tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(generated), "--out", str(out)]) == 0
    assert (out / "curves.csv").exists() and (out / "model.dshd").exists()
    assert capsys.readouterr().out.startswith("train ")
    ck = str(out / "model.dshd")
    assert main(["eval", "--checkpoint", ck, "--data", str(generated),
                 "--report", str(tmp_path / "r.csv")]) == 0
    line = capsys.readouterr().out
    assert "mean_dssim=" in line and (tmp_path / "r.csv").exists()
    gb = next((generated / "records").iterdir())
    assert main(["infer", "--checkpoint", ck, "--gbuffer", str(gb), "--out",
                 str(tmp_path / "o.png")]) == 0
    assert (tmp_path / "o.png").read_bytes()[:4] == b"\x89PNG"
    assert main(["infer", "--checkpoint", ck, "--gbuffer", str(gb), "--rescale", "2",
                 "--out", str(tmp_path / "o.pfm")]) == 0
    assert main(["bench", "--checkpoint", ck, "--res", "32x16", "--iterations", "2"]) == 0
    assert "median_ms=" in capsys.readouterr().out.splitlines()[-1]


def test_train_sweep_writes_one_curve_per_point(generated, tmp_path):
    cfg = tiny_config(tmp_path, iterations=2)
    out = tmp_path / "sweep"
    assert main(["train", "--config", str(cfg), "--data", str(generated), "--out", str(out),
                 "--u0", "2,4", "--kernel-size", "1,3"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["u0_2_k1", "u0_2_k3", "u0_4_k1", "u0_4_k3"]
    assert all((p / "curves.csv").exists() for p in out.iterdir())


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["gen", "--scenes", "x", "--views", "1", "--out", str(tmp_path)]) == 2
    assert main(["gen", "--scenes", "0", "--views", "1", "--out", str(tmp_path)]) == 2
    assert main(["bench", "--checkpoint", "c", "--res", "big"]) == 2
    assert main(["params"]) == 2
    assert main(["params", "--config", str(tmp_path / "missing.json")]) == 2
    assert main([]) == 2


def test_runtime_errors_exit_1(generated, tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(generated), "--out", str(out)]) == 0
    empty = tmp_path / "empty"
    m = json.loads((generated / "manifest.json").read_text())
    m["splits"]["test"] = []
    empty.mkdir()
    (empty / "manifest.json").write_text(json.dumps(m))
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "model.dshd"), "--data", str(empty)]) == 1
    assert "empty" in capsys.readouterr().err
    (tmp_path / "bad.dshd").write_bytes(b"nope")
    assert main(["bench", "--checkpoint", str(tmp_path / "bad.dshd")]) == 1
    assert main(["augment", "--in", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x")]) == 1


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "deepshading", "params", "--preset", "GI"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "133489"
    r = subprocess.run([sys.executable, "-m", "deepshading", "nonsense"], capture_output=True)
    assert r.returncode == 2
