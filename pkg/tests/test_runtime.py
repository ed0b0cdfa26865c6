import numpy as np
import pytest
from PIL import Image

from deepshading import runtime as rt
from deepshading.scenegen import GBuffer
from deepshading.trainer import load_checkpoint, save_checkpoint
from deepshading.unet import NetConfig, build
from synthetic import ao_like_records

AO_NET = NetConfig(3, 4, 3, 6, 1, attributes=("N_s", "P_s"))


def gbuffer(n=16, seed=0):
    return GBuffer(dict(ao_like_records(1, n, seed=seed)[0].channels))


def test_assemble_order_and_missing_channel():
    g = gbuffer()
    x = rt.assemble_input(g, AO_NET)
    np.testing.assert_array_equal(x[:3], g["N_s"])
    np.testing.assert_array_equal(x[3:], g["P_s"])
    with pytest.raises(ValueError, match="P_s"):
        rt.assemble_input({"N_s": g["N_s"]}, AO_NET)
    with pytest.raises(ValueError):
        rt.assemble_input(g, NetConfig(2, 4, 3, 6, 1))


def test_infer_is_deterministic_and_total():
    net = build(AO_NET, seed=1)
    g = gbuffer()
    assert rt.infer(net, g).tobytes() == rt.infer(net, g).tobytes()
    empty = GBuffer({"N_s": np.zeros((3, 16, 16), np.float32),
                     "P_s": np.zeros((3, 16, 16), np.float32)})
    assert np.all(np.isfinite(rt.infer(net, empty)))


def test_infer_matches_training_forward_after_reload(tmp_path):
    net = build(AO_NET, seed=2)
    save_checkpoint(tmp_path / "c.dshd", net)
    g = gbuffer()
    direct = net.forward(np.concatenate([g["N_s"], g["P_s"]]))
    assert np.abs(rt.infer(load_checkpoint(tmp_path / "c.dshd").net, g) - direct).max() <= 1e-6


def test_mono_net_runs_once_per_colour():
    cfg = NetConfig(2, 2, 3, 2, 1, attributes=("D_focal", "L"))
    net = build(cfg, seed=0)
    rng = np.random.default_rng(0)
    g = {"D_focal": rng.random((1, 8, 8), dtype=np.float32),
         "L": rng.random((3, 8, 8), dtype=np.float32)}
    out = rt.infer(net, g)
    assert out.shape == (3, 8, 8)
    for c in range(3):
        x = np.concatenate([g["D_focal"], g["L"][c:c + 1]])
        np.testing.assert_allclose(out[c], net.forward(x)[0], rtol=1e-6, atol=1e-7)


def test_compose_ao():
    rng = np.random.default_rng(1)
    albedo = rng.random((3, 4, 4)).astype(np.float32)
    ambient = [0.2, 0.5, 1.0]
    ones, zeros = np.ones((1, 4, 4), np.float32), np.zeros((1, 4, 4), np.float32)
    np.testing.assert_allclose(rt.compose_ao(ones, albedo, ambient),
                               albedo * np.reshape(ambient, (3, 1, 1)), rtol=1e-6)
    assert not rt.compose_ao(zeros, albedo, ambient).any()
    ao = rng.random((1, 4, 4)).astype(np.float32)
    np.testing.assert_allclose(rt.compose_ao(ao, albedo, np.multiply(ambient, 2)),
                               2 * rt.compose_ao(ao, albedo, ambient), rtol=1e-6)
    with pytest.raises(ValueError):
        rt.compose_ao(np.ones((1, 4, 5)), albedo, ambient)
    with pytest.raises(ValueError):
        rt.compose_ao(ones, albedo, [1.0, 1.0])


def test_rescale_effect_radius():
    base = GBuffer({"P_s": np.full((3, 2, 2), 1.5, np.float32),
                    "D_s": np.full((1, 2, 2), 1.5, np.float32),
                    "N_s": np.full((3, 2, 2), 0.5, np.float32)})
    same = rt.rescale_effect_radius(base, 1)
    for k in base.names():
        np.testing.assert_array_equal(same[k], base[k])
    r = rt.rescale_effect_radius(base, 4)
    np.testing.assert_array_equal(r["P_s"], 6.0)
    np.testing.assert_array_equal(r["D_s"][0], r["P_s"][2])
    np.testing.assert_array_equal(r["N_s"], 0.5)
    a, b = 1.7, 0.3
    twice = rt.rescale_effect_radius(rt.rescale_effect_radius(base, a), b)
    once = rt.rescale_effect_radius(base, a * b)
    for k in base.names():
        assert twice[k].tobytes() == once[k].tobytes()
    with pytest.raises(ValueError):
        rt.rescale_effect_radius(base, 0)


class Oracle:
    """Stands in for a network and returns the record's own target."""

    def __init__(self, records):
        self.config = AO_NET
        self.by_input = {r.channels["N_s"].tobytes(): r.target for r in records}

    def forward(self, x):
        return self.by_input[x[:3].tobytes()]


def test_evaluate_oracle_and_baseline(tmp_path):
    recs = ao_like_records(4, 16, seed=3)
    res = rt.evaluate(Oracle(recs), recs, report=tmp_path / "r.csv")
    assert res["mean_ssim"] == 1.0 and res["mean_dssim"] == 0.0 and res["records"] == 4
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "id,ssim,dssim" and len(lines) == 5
    base = rt.constant_baseline(recs, rt.target_mean(recs))
    assert 0 < base["mean_dssim"] < 1
    with pytest.raises(ValueError):
        rt.evaluate(Oracle(recs), [])


def test_evaluate_is_permutation_invariant():
    net = build(AO_NET, seed=4)
    recs = ao_like_records(5, 16, seed=5)
    a = rt.evaluate(net, recs)["mean_dssim"]
    b = rt.evaluate(net, recs[::-1])["mean_dssim"]
    assert a == pytest.approx(b, abs=1e-15)


def test_benchmark():
    net = build(AO_NET)
    s = rt.benchmark(net, 32, 16, warmup=0, iterations=1)
    assert len(s["samples_ms"]) == 1 and s["mean_ms"] > 0
    with pytest.raises(ValueError):
        rt.benchmark(net, 30, 16)


def test_benchmark_time_grows_with_resolution():
    net = build(AO_NET)
    small = rt.benchmark(net, 128, 128, warmup=1, iterations=3)["median_ms"]
    large = rt.benchmark(net, 512, 512, warmup=1, iterations=3)["median_ms"]
    assert large > small


def test_tonemap_bytes():
    assert rt.tonemap(np.full((1, 1, 1), 0.5), gamma=1.0)[0, 0] == 128
    assert rt.tonemap(np.full((1, 1, 1), 0.5), gamma=2.2)[0, 0] == round(255 * 0.5 ** (1 / 2.2)) == 186
    assert rt.tonemap(np.full((1, 1, 1), 7.0))[0, 0] == 255
    assert rt.tonemap(np.full((1, 1, 1), -1.0))[0, 0] == 0
    assert rt.tonemap(np.zeros((3, 2, 5))).shape == (2, 5, 3)
    with pytest.raises(ValueError):
        rt.tonemap(np.zeros((1, 1, 1)), gamma=0)


def test_tonemap_export_writes_png(tmp_path):
    img = np.linspace(0, 1, 3 * 4 * 6).reshape(3, 4, 6)
    rt.tonemap_export(img, tmp_path / "o.png", 2.2)
    back = np.asarray(Image.open(tmp_path / "o.png"))
    np.testing.assert_array_equal(back, rt.tonemap(img, 2.2))
