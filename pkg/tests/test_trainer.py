import dataclasses

import numpy as np
import pytest

from deepshading import trainer as tr
from deepshading.loss import LossKind, dssim
from deepshading.runtime import infer
from deepshading.unet import NetConfig, build
from synthetic import ao_like_records, linear_records

AO_NET = NetConfig(2, 4, 3, 6, 1, attributes=("N_s", "P_s"))


def cfg(**kw):
    base = dict(net=AO_NET, loss=LossKind("ssim"), iterations=10, batch_size=2, crop_size=16,
                validation_every=5, seed=3)
    base.update(kw)
    return tr.TrainConfig(**base)


@pytest.fixture(scope="module")
def data():
    return ao_like_records(6, 24, seed=1), ao_like_records(2, 16, seed=2, scene=1)


def test_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        cfg(crop_size=12)  # not a multiple of 8
    with pytest.raises(ValueError):
        cfg(net=NetConfig(5, 16, 3, 6, 1), crop_size=8)  # not a multiple of 16
    c = cfg()
    assert tr.TrainConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError):
        tr.TrainConfig.from_dict({**c.to_dict(), "momentum": 0.9})


def test_single_iteration_is_one_step(data):
    net = build(AO_NET, seed=3)
    before = [p.copy() for p in net.parameters()]
    res = tr.train(cfg(iterations=1, batch_size=1, validation_every=0), data[0], net=net)
    assert res.optimizer.steps == 1 and len(res.curves) == 1
    assert any(not np.array_equal(a, b) for a, b in zip(before, res.net.parameters()))


def test_step_count_matches_iterations(data):
    res = tr.train(cfg(iterations=7, validation_every=0), data[0])
    assert res.optimizer.steps == 7 and res.iteration == 7


def test_batches_walk_through_epoch_permutations():
    idx = [tr._batch_indices(5, i, 3, 6) for i in range(4)]
    assert sorted(idx[0] + idx[1]) == list(range(6))
    assert sorted(idx[2] + idx[3]) == list(range(6))
    assert idx == [tr._batch_indices(5, i, 3, 6) for i in range(4)]


def test_overfits_a_constant_target():
    rec = ao_like_records(1, 16, seed=4)[0]
    rec.target[...] = 1.0
    res = tr.train(cfg(iterations=200, batch_size=1, validation_every=0), [rec] * 4)
    losses = [float(r["train_loss"]) for r in res.curves]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
    assert abs(float(infer(res.net, rec.channels).mean()) - 1.0) < 0.05


def test_converges_to_least_squares_solution():
    # zero-mean inputs keep the curvature near 2, where ADADELTA's unit
    # step near the optimum is still stable
    recs = linear_records(4, 8, [0.3, -0.2, 0.5, 0.1], 0.2, noise=0.05, seed=0, low=-1, high=1)
    net = NetConfig(1, 1, 1, 4, 1, leaky_slope=1.0, mode="rgb", attributes=("L", "D_s"))
    c = tr.TrainConfig(net, LossKind("l2"), iterations=3000, batch_size=4, crop_size=8,
                       validation_every=0, seed=0)
    res = tr.train(c, recs)
    x = np.concatenate([np.concatenate([r.channels["L"], r.channels["D_s"]]).reshape(4, -1)
                        for r in recs], axis=1)
    a = np.vstack([x, np.ones(x.shape[1])]).T
    t = np.concatenate([r.target.ravel() for r in recs])
    expected = np.linalg.lstsq(a, t, rcond=None)[0]
    got = np.append(res.net.convs[0].weights.ravel(), res.net.convs[0].bias)
    np.testing.assert_allclose(got, expected, atol=1e-3)


def test_validation_dssim_matches_offline(tmp_path, data):
    c = cfg(iterations=10, checkpoint_dir=str(tmp_path))
    res = tr.train(c, *data, curves_path=tmp_path / "curves.csv")
    ck = tr.load_checkpoint(tr.checkpoint_path(tmp_path, 10))
    offline = np.mean([dssim(infer(ck.net, r.channels), r.target) for r in data[1]])
    assert abs(float(res.curves[-1]["val_dssim"]) - offline) <= 1e-6
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "iteration,train_loss,val_dssim" and len(lines) == 11
    assert [bool(r["val_dssim"]) for r in res.curves].count(True) == 2


def test_resume_is_bitwise(tmp_path, data):
    full = tr.train(cfg(iterations=12, validation_every=0), data[0])
    part = tr.train(cfg(iterations=5, validation_every=0, checkpoint_dir=str(tmp_path)), data[0])
    ck = tr.load_checkpoint(tr.checkpoint_path(tmp_path, 5))
    rest = tr.train(cfg(iterations=12, validation_every=0), data[0], resume=ck)
    assert part.iteration == 5 and rest.optimizer.steps == 12
    for a, b in zip(full.net.parameters(), rest.net.parameters()):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(full.optimizer.state_arrays(), rest.optimizer.state_arrays()):
        assert a.tobytes() == b.tobytes()


def test_resume_keeps_earlier_curve_rows(tmp_path, data):
    c = cfg(iterations=4, validation_every=0, checkpoint_dir=str(tmp_path), checkpoint_every=2)
    tr.train(c, data[0], curves_path=tmp_path / "c.csv")
    ck = tr.load_checkpoint(tr.checkpoint_path(tmp_path, 2))
    tr.train(dataclasses.replace(c, iterations=6), data[0], curves_path=tmp_path / "c.csv",
             resume=ck)
    rows = (tmp_path / "c.csv").read_text().splitlines()[1:]
    assert [int(r.split(",")[0]) for r in rows] == [1, 2, 3, 4, 5, 6]


def test_checkpoint_roundtrip(tmp_path):
    net = build(AO_NET, seed=9)
    path = tmp_path / "n.dshd"
    tr.save_checkpoint(path, net)
    ck = tr.load_checkpoint(path)
    assert ck.net.num_parameters() == net.num_parameters()
    x = np.random.default_rng(0).standard_normal((6, 16, 16)).astype(np.float32)
    assert ck.net.forward(x).tobytes() == net.forward(x).tobytes()
    tr.save_checkpoint(tmp_path / "m.dshd", ck.net)
    assert (tmp_path / "m.dshd").read_bytes() == path.read_bytes()


def test_checkpoint_errors(tmp_path):
    net = build(AO_NET)
    path = tmp_path / "n.dshd"
    tr.save_checkpoint(path, net)
    data = path.read_bytes()
    (tmp_path / "magic.dshd").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(tr.CheckpointFormatError, match="magic"):
        tr.load_checkpoint(tmp_path / "magic.dshd")
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 1
    (tmp_path / "bit.dshd").write_bytes(bytes(flipped))
    with pytest.raises(tr.CheckpointFormatError, match="checksum"):
        tr.load_checkpoint(tmp_path / "bit.dshd")
    with pytest.raises(tr.ConfigMismatchError):
        tr.load_checkpoint(path, dataclasses.replace(AO_NET, levels=3))


def test_training_errors(tmp_path, data):
    with pytest.raises(ValueError, match="empty"):
        tr.train(cfg(validation_every=0), [])
    with pytest.raises(ValueError, match="validation"):
        tr.train(cfg(), data[0], [])
    missing = [dataclasses.replace(data[0][0], channels={"N_s": data[0][0].channels["N_s"]})]
    with pytest.raises(ValueError, match="channel mismatch"):
        tr.train(cfg(validation_every=0), missing)
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        tr.train(cfg(validation_every=0, checkpoint_dir=str(blocker / "sub")), data[0])
    with pytest.raises(ValueError, match="crop"):
        tr.train(cfg(crop_size=32, validation_every=0), data[0])


def test_mono_training_uses_one_colour_channel():
    recs = linear_records(2, 8, [0.2, 0.3, 0.1, 0.4], 0.0, seed=1)
    for r in recs:
        r.target = np.repeat(r.target, 3, axis=0)
    net = NetConfig(2, 2, 3, 2, 1, attributes=("L", "D_s"))
    res = tr.train(tr.TrainConfig(net, iterations=3, batch_size=2, crop_size=8,
                                  validation_every=0), recs)
    assert infer(res.net, recs[0].channels).shape == (3, 8, 8)
    x, t = tr.make_batch(tr._Examples(recs, net), tr.TrainConfig(net, crop_size=8), 0)
    assert x.shape == (8, 2, 8, 8) and t.shape == (8, 1, 8, 8)


def test_smoothed():
    np.testing.assert_allclose(tr.smoothed([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
