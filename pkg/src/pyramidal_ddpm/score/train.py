"""Multi-scale noise-prediction training.

Each batch item is a finest-resolution grid. Its image and coordinate fields
are resized together to a random ladder level (optionally cropped to a fixed
patch, keeping absolute coordinates), noised to a random step, and the network
regresses the injected noise given the encoded coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, ParameterError
from ..grid import ImageGrid, positional_encode, random_crop, random_resize
from ..schedule import NoiseSchedule
from .analytic import GaussianMixtureData
from .net import ConvScoreNet
from .nn import Adam

TRAIN_MODES = ("resize", "patch")


def _prepare(grid: ImageGrid, ladder, rng, mode: str, patch_size: int | None) -> ImageGrid:
    g = random_resize(grid, ladder, rng)
    if mode == "patch" and patch_size is not None and g.height > patch_size:
        g = random_crop(g, patch_size, rng)
    return g


def train_step(
    net: ConvScoreNet,
    batch: list[ImageGrid],
    ladder,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    optimizer: Adam,
    mode: str = "resize",
    patch_size: int | None = None,
    dtype=np.float32,
) -> tuple[ConvScoreNet, float]:
    """One optimizer update on the noise-regression loss; returns ``(net, loss)``.

    The loss is the per-element squared error averaged over the batch, so an
    untrained (zero-output) network scores ``E|z|^2 / N = 1``.
    """
    if not batch:
        raise ParameterError("training batch is empty")
    if mode not in TRAIN_MODES:
        raise ParameterError(f"unknown training mode {mode!r}")
    L = net.cfg.L

    # draw every random quantity first, in item order, so results do not
    # depend on how items are grouped below
    items = []
    for grid in batch:
        g = _prepare(grid, ladder, rng, mode, patch_size)
        t = int(rng.integers(1, schedule.T + 1))
        z = rng.standard_normal(g.data.shape)
        ab = schedule.alpha_bar[t - 1]
        x_t = np.sqrt(ab) * g.data + np.sqrt(1.0 - ab) * z
        pe = None
        if L:
            pe = np.concatenate([positional_encode(g.coord_i, L), positional_encode(g.coord_j, L)], axis=-1)
        items.append((x_t, z, schedule.noise_level(t), pe))

    groups: dict[tuple, list[int]] = {}
    for idx, (x_t, *_rest) in enumerate(items):
        groups.setdefault(x_t.shape, []).append(idx)

    n = len(items)
    total_loss = 0.0
    grads: dict[str, np.ndarray] | None = None
    for shape in sorted(groups):
        idx = groups[shape]
        x = np.stack([items[i][0] for i in idx])
        z = np.stack([items[i][1] for i in idx]).astype(dtype)
        tau = np.array([items[i][2] for i in idx])
        pe = np.stack([items[i][3] for i in idx]) if L else None
        pred, cache = net.forward(x, tau, pe, dtype=dtype)
        err = pred - z
        N = err[0].size
        total_loss += float(np.sum(err.astype(np.float64) ** 2)) / N
        _, g = net.backward(cache, (2.0 / (N * n)) * err)
        if grads is None:
            grads = {k: v.astype(np.float64) for k, v in g.items()}
        else:
            for k, v in g.items():
                grads[k] += v
    loss = total_loss / n
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite training loss at optimizer step {optimizer.step_count + 1}",
                             step=optimizer.step_count + 1)
    optimizer.step(net.params, grads)
    return net, loss


def sample_batch(data: GaussianMixtureData, n: int, rng: np.random.Generator) -> list[ImageGrid]:
    """Draw ``n`` finest-resolution grids from a toy mixture."""
    return [ImageGrid.full_frame(x) for x in data.sample(n, rng)]


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    ema: list[float] = field(default_factory=list)


class Trainer:
    """Seeded training loop over a toy mixture.

    ``ema_decay`` smooths the reported loss only; weights are not averaged.
    """

    def __init__(
        self,
        net: ConvScoreNet,
        data: GaussianMixtureData,
        ladder,
        schedule: NoiseSchedule,
        seed: int = 0,
        batch_size: int = 8,
        lr: float = 1e-4,
        clip: float | None = 1.0,
        mode: str = "resize",
        patch_size: int | None = None,
        ema_decay: float = 0.99,
        dtype=np.float32,
    ):
        self.net = net
        self.data = data
        self.ladder = list(ladder)
        self.schedule = schedule
        self.rng = np.random.default_rng(seed)
        self.batch_size = batch_size
        self.optimizer = Adam(lr=lr, clip=clip)
        self.mode = mode
        self.patch_size = patch_size
        self.ema_decay = ema_decay
        self.dtype = dtype
        self.ema_loss: float | None = None
        self.log = TrainLog()

    def step(self) -> float:
        batch = sample_batch(self.data, self.batch_size, self.rng)
        _, loss = train_step(
            self.net, batch, self.ladder, self.schedule, self.rng, self.optimizer,
            mode=self.mode, patch_size=self.patch_size, dtype=self.dtype,
        )
        d = self.ema_decay
        self.ema_loss = loss if self.ema_loss is None else d * self.ema_loss + (1 - d) * loss
        k = self.optimizer.step_count
        self.log.steps.append(k)
        self.log.loss.append(loss)
        self.log.ema.append(self.ema_loss)
        return loss

    def run(self, steps: int, callback=None) -> TrainLog:
        for _ in range(steps):
            self.step()
            if callback is not None:
                callback(self)
        return self.log


def oracle_score_mse(
    net: ConvScoreNet,
    data: GaussianMixtureData,
    ladder,
    schedule: NoiseSchedule,
    n: int = 256,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean of ``|s_net - s_exact|^2 / N`` over ``n`` random ``(level, t, x_t)``.

    ``x_t`` is drawn from the exact diffused marginal at the drawn level.
    """
    from .analytic import analytic_score

    rng = np.random.default_rng(0) if rng is None else rng
    full = ImageGrid.full_frame(data.means[0])
    total = 0.0
    for _ in range(n):
        g = random_resize(full, ladder, rng)
        level = data.level_of(g.data.shape)
        t = int(rng.integers(1, schedule.T + 1))
        ab = schedule.alpha_bar[t - 1]
        x0 = data.sample(1, rng, level)[0]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * rng.standard_normal(x0.shape)
        enc = g.encoding(net.cfg.L) if net.cfg.L else None
        diff = net.score(x_t, t, schedule, enc) - analytic_score(data, level, x_t, t, schedule)
        total += float(np.mean(diff**2))
    return total / n
