import numpy as np
import pytest

from pyramidal_ddpm.errors import ParameterError
from pyramidal_ddpm.grid import ImageGrid
from pyramidal_ddpm.schedule import make_schedule
from pyramidal_ddpm.score import ConvScoreNet, NetConfig, Trainer, make_toy, train_step
from pyramidal_ddpm.score.nn import Adam
from pyramidal_ddpm.score.train import sample_batch

SCHED = make_schedule()


def test_zero_init_loss_is_unit():
    net = ConvScoreNet.initialize(NetConfig(depth=1, width=8, L=2), 0)
    data = make_toy("gaussian_blob", H=16)
    rng = np.random.default_rng(0)
    batch = sample_batch(data, 64, rng)
    _, loss = train_step(net, batch, [4, 8, 16], SCHED, rng, Adam())
    assert loss == pytest.approx(1.0, abs=0.1)


def test_step_is_seed_deterministic():
    data = make_toy("checkerboard", H=16)
    out = []
    for _ in range(2):
        net = ConvScoreNet.initialize(NetConfig(depth=1, width=8, L=2), 0)
        tr = Trainer(net, data, [8, 16], SCHED, seed=3, batch_size=4)
        tr.run(3)
        out.append((tr.log.loss, net.params["conv_out.w"].copy()))
    assert out[0][0] == out[1][0]
    assert np.array_equal(out[0][1], out[1][1])


def test_no_positional_encoding_mode():
    net = ConvScoreNet.initialize(NetConfig(depth=1, width=8, L=0), 0)
    assert net.params["conv_in.w"].shape[2] == 1
    tr = Trainer(net, make_toy("point_mass", H=16), [8, 16], SCHED, seed=0, batch_size=4)
    tr.run(3)
    assert np.isfinite(tr.ema_loss)


def test_patch_mode_only_sees_patches(monkeypatch):
    net = ConvScoreNet.initialize(NetConfig(depth=1, width=8, L=2), 0)
    seen = []
    orig = net.forward

    def spy(x, *a, **k):
        seen.append(x.shape[1:3])
        return orig(x, *a, **k)

    monkeypatch.setattr(net, "forward", spy)
    tr = Trainer(net, make_toy("checkerboard", H=32), [8, 16, 32], SCHED, seed=0, batch_size=8,
                 mode="patch", patch_size=8)
    tr.run(4)
    assert seen and all(s == (8, 8) for s in seen)


def test_empty_batch_and_bad_mode():
    net = ConvScoreNet.initialize(NetConfig(depth=1, width=4, L=1), 0)
    with pytest.raises(ParameterError):
        train_step(net, [], [8], SCHED, np.random.default_rng(0), Adam())
    g = ImageGrid.full_frame(np.zeros((8, 8, 1)))
    with pytest.raises(ParameterError):
        train_step(net, [g], [8], SCHED, np.random.default_rng(0), Adam(), mode="tiles")


@pytest.mark.slow
def test_training_decreases_ema_loss():
    net = ConvScoreNet.initialize(NetConfig(depth=1, width=16, L=2), 0)
    tr = Trainer(net, make_toy("two_component", H=16), [8, 16], SCHED, seed=1, batch_size=4)
    tr.run(2000)
    assert tr.log.ema[-1] < tr.log.ema[0]
