"""Command-line entry point: ``pyramidal-ddpm {train,generate,sr,bench,eval}``.

Every command reads an optional YAML run config (see :mod:`.config`), applies
``--set section.key=value`` overrides and then the dedicated flags, writes
the resolved config next to its outputs, and tags every CSV row with the
config hash.

Exit codes: 0 success, 2 usage or config error, 3 I/O error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import yaml

from .config import ConfigError, RunConfig, apply_overrides, load_config
from .errors import FileFormatError, NumericalError, ParameterError, ShapeError
from .evaluate import gaussian_moment_error, nfe_cost, psnr, sliced_wasserstein, ssim
from .imageio import FORMAT_SUFFIX, ImageFolder, read_image, write_image
from .sampler import generate_pyramidal, make_sampler_config, super_resolve_pyramidal
from .schedule import make_schedule
from .score import AnalyticScore, ConvScoreNet, NetConfig, Trainer, load_checkpoint, make_toy, save_checkpoint

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

# stream tag separating reference draws from per-sample generation streams
_REFERENCE_STREAM = 2**32


class UsageError(Exception):
    """The requested run is inconsistent (reported with exit code 2)."""


# --- config resolution -----------------------------------------------------------


def _flag_overrides(args) -> list[str]:
    pairs = [
        ("seed", "sampler.seed"),
        ("out", "output.dir"),
        ("format", "output.format"),
        ("backend", "model.backend"),
        ("checkpoint", "model.checkpoint"),
        ("toy", "data.toy"),
        ("image_dir", "data.image_dir"),
        ("T_f", "sampler.T_f"),
        ("T_s", "sampler.T_s"),
        ("delta_ts", "sampler.delta_ts"),
        ("lam", "sampler.lambda"),
        ("steps", "train.steps"),
        ("patch_size", "train.patch_size"),
    ]
    out = []
    for attr, key in pairs:
        value = getattr(args, attr, None)
        if value is not None:
            out.append(f"{key}={json.dumps(value)}")
    if args.n_samples is not None:
        section = "eval" if args.command == "eval" else "output"
        out.append(f"{section}.n_samples={args.n_samples}")
    if args.ladder is not None:
        out.append(f"ladder={json.dumps(args.ladder)}")
    if getattr(args, "emit_levels", False):
        out.append("output.emit_levels=true")
    if getattr(args, "no_pe", False):
        out.append("model.pe_degree=0")
    if getattr(args, "patch_size", None) is not None:
        out.append('train.mode="patch"')
    if getattr(args, "sweep", None) is not None:
        out.append(f"bench.sweep={json.dumps(args.sweep)}")
    return out


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(cfg, list(args.set or []) + _flag_overrides(args))


def _toy(cfg: RunConfig):
    if cfg.data.toy is None:
        return None
    params = dict(cfg.data.params)
    params.setdefault("H", cfg.ladder[-1])
    try:
        return make_toy(cfg.data.toy, **params)
    except TypeError as exc:
        raise ConfigError(f"bad data.params for toy {cfg.data.toy!r}: {exc}") from None


def _dataset(cfg: RunConfig):
    if cfg.data.image_dir is not None:
        data = ImageFolder(cfg.data.image_dir)
    else:
        data = _toy(cfg)
    fine = cfg.ladder[-1]
    H, W, _ = data.resolution
    if (H, W) != (fine, fine):
        raise UsageError(f"data resolution {H}x{W} does not match the finest ladder resolution {fine}x{fine}")
    return data


def _model(cfg: RunConfig):
    if cfg.model.backend == "analytic":
        if cfg.data.image_dir is not None:
            raise UsageError("the analytic backend needs a toy dataset, not an image directory")
        return AnalyticScore(_dataset(cfg))
    if not cfg.model.checkpoint:
        raise UsageError("the net backend needs model.checkpoint (--checkpoint)")
    return load_checkpoint(cfg.model.checkpoint)


def _channels(model) -> int:
    if isinstance(model, ConvScoreNet):
        return model.cfg.C
    return model.data.resolution[-1]


def _sampler_config(cfg: RunConfig, channels: int):
    s = cfg.schedule
    base = make_schedule(s.kind, s.T, s.beta_start, s.beta_end, s.sigma_variant)
    sp = cfg.sampler
    return make_sampler_config(
        T_f=sp.T_f, T_s=sp.T_s, delta_ts=sp.delta_ts, ladder=cfg.ladder, lam=sp.lam, base=base,
        sigma_variant=s.sigma_variant, seed=sp.seed, channels=channels, pe_degree=cfg.model.pe_degree,
        strict_paper_init=sp.strict_paper_init, exact_guidance=sp.exact_guidance,
    )


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Per-sample stream; results never depend on ``--jobs``."""
    return np.random.default_rng([seed, index])


# --- output helpers ------------------------------------------------------------


def _prepare_out(cfg: RunConfig) -> str:
    out = cfg.output.dir
    os.makedirs(out, exist_ok=True)
    # the directory is implied by where the file sits; leaving it out keeps
    # reruns into different directories byte-identical
    d = cfg.to_dict()
    del d["output"]["dir"]
    with open(os.path.join(out, "config.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(d, fh, sort_keys=False)
    return out


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _write_image(cfg: RunConfig, path_stem: str, x: np.ndarray) -> str:
    fmt = cfg.output.format
    C = x.shape[-1]
    if fmt == "pgm" and C != 1 or fmt == "ppm" and C != 3:
        raise UsageError(f"format {fmt} cannot hold {C}-channel images")
    path = path_stem + FORMAT_SUFFIX[fmt]
    write_image(path, x, fmt)
    return path


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


class _GenerateJob:
    """Picklable per-sample generation task."""

    def __init__(self, model, scfg):
        self.model, self.scfg = model, scfg

    def __call__(self, index: int):
        return generate_pyramidal(self.model, self.scfg, 1, sample_rng(self.scfg.seed, index))


# --- commands ------------------------------------------------------------------------


def cmd_train(cfg: RunConfig, args) -> int:
    if cfg.model.backend == "analytic":
        raise UsageError("analytic backend needs no training; set model.backend to net")
    data = _dataset(cfg)
    out = _prepare_out(cfg)
    tr = cfg.train
    net_cfg = NetConfig(depth=cfg.model.depth, width=cfg.model.width, L=cfg.model.pe_degree,
                        C=data.resolution[-1], T=cfg.schedule.T)
    net = ConvScoreNet.initialize(net_cfg, cfg.sampler.seed)
    s = cfg.schedule
    schedule = make_schedule(s.kind, s.T, s.beta_start, s.beta_end, s.sigma_variant)
    trainer = Trainer(net, data, cfg.ladder, schedule, seed=cfg.sampler.seed, batch_size=tr.batch_size,
                      lr=tr.lr, clip=tr.clip, mode=tr.mode, patch_size=tr.patch_size, ema_decay=tr.ema_decay)
    h = cfg.hash()
    rows = []

    def log(t: Trainer):
        k = t.optimizer.step_count
        if k % tr.log_every == 0:
            rows.append([h, k, _fmt(t.log.loss[-1]), _fmt(t.ema_loss)])

    trainer.run(tr.steps, log)
    save_checkpoint(net, os.path.join(out, "model.pdsn"))
    _write_csv(os.path.join(out, "loss.csv"), ["config_hash", "step", "loss", "ema_loss"], rows)
    final = "n/a" if trainer.ema_loss is None else f"{trainer.ema_loss:.4f}"
    print(f"trained {tr.steps} steps, final EMA loss {final}; checkpoint {os.path.join(out, 'model.pdsn')}")
    return EXIT_OK


def cmd_generate(cfg: RunConfig, args) -> int:
    model = _model(cfg)
    scfg = _sampler_config(cfg, _channels(model))
    out = _prepare_out(cfg)
    n = cfg.output.n_samples
    results = _map(_GenerateJob(model, scfg), list(range(n)), args.jobs)
    h = cfg.hash()
    rows = []
    for i, res in enumerate(results):
        if cfg.output.emit_levels:
            for lv in res.levels:
                _write_image(cfg, os.path.join(out, f"sample_{i:04d}_{lv.height}"), lv.data[0])
        else:
            _write_image(cfg, os.path.join(out, f"sample_{i:04d}"), res.image.data[0])
        rows += [[h, i, r.level, r.phase, r.t, r.nfe, ""] for r in res.trace]
    _write_csv(os.path.join(out, "trace.csv"), ["config_hash", "sample", "level", "phase", "t", "nfe", "residual"], rows)
    steps = results[0].steps_per_level()
    print(f"generated {n} sample(s); steps per level {steps}")
    return EXIT_OK


def cmd_sr(cfg: RunConfig, args) -> int:
    model = _model(cfg)
    lr = read_image(args.input)
    r0 = cfg.ladder[0]
    if lr.shape[:2] != (r0, r0):
        raise UsageError(
            f"input resolution {lr.shape[0]}x{lr.shape[1]} does not match the ladder's coarsest "
            f"resolution {r0}x{r0}"
        )
    if lr.shape[-1] != _channels(model):
        raise UsageError(f"input has {lr.shape[-1]} channels, model expects {_channels(model)}")
    scfg = _sampler_config(cfg, _channels(model))
    out = _prepare_out(cfg)
    res = super_resolve_pyramidal(model, scfg, lr, sample_rng(scfg.seed, 0))
    path = _write_image(cfg, os.path.join(out, "sr"), res.image.data)
    if cfg.output.emit_levels:
        for lv in res.levels[1:-1]:
            _write_image(cfg, os.path.join(out, f"sr_{lv.height}"), lv.data)
    h = cfg.hash()
    rows = [[h, r.level, r.phase, r.t, r.nfe, _fmt(r.residual)] for r in res.trace]
    _write_csv(os.path.join(out, "residuals.csv"), ["config_hash", "level", "phase", "t", "nfe", "residual"], rows)
    final = res.trace[-1].residual if res.trace else float("nan")
    print(f"wrote {path}; refinement steps per level {res.steps_per_level()}; final residual {final:.3e}")
    return EXIT_OK


def _cost_row(h, scfg, ref):
    rep = nfe_cost(scfg, ref)
    return rep, [h, _fmt(scfg.delta_ts), scfg.T_f, scfg.T_s, scfg.n_refine, rep.total_pyramidal, rep.total_full,
                 _fmt(rep.speedup_ratio)]


def cmd_bench(cfg: RunConfig, args) -> int:
    channels = 1
    scfg = _sampler_config(cfg, channels)
    out = _prepare_out(cfg)
    ref = cfg.bench.reference_T or cfg.schedule.T
    h = cfg.hash()
    header = ["config_hash", "delta_ts", "T_f", "T_s", "refine_steps", "total_pyramidal", "total_full", "speedup"]
    rep, row = _cost_row(h, scfg, ref)
    _write_csv(os.path.join(out, "cost.csv"), header, [row])
    _write_csv(
        os.path.join(out, "cost_levels.csv"),
        ["config_hash", "resolution", "steps", "pixel_weighted_nfe"],
        [[h, lc.resolution, lc.steps, lc.pixel_weighted_nfe] for lc in rep.levels],
    )
    print(f"pixel-weighted NFE {rep.total_pyramidal} vs {rep.total_full}: speedup {rep.speedup_ratio:.4g}")
    if cfg.bench.sweep:
        rows = []
        for d in cfg.bench.sweep:
            sweep_cfg = apply_overrides(cfg, [f"sampler.delta_ts={json.dumps(float(d))}"])
            _, r = _cost_row(h, _sampler_config(sweep_cfg, channels), ref)
            rows.append(r)
            print(f"  delta_ts={d}: speedup {r[-1]}")
        _write_csv(os.path.join(out, "sweep.csv"), header, rows)
    return EXIT_OK


def _load_set(directory: str) -> np.ndarray:
    return ImageFolder(directory).images


def cmd_eval(cfg: RunConfig, args) -> int:
    seed = cfg.sampler.seed
    toy = _toy(cfg) if cfg.data.image_dir is None else None
    if args.samples:
        samples = _load_set(args.samples)
    else:
        model = _model(cfg)
        scfg = _sampler_config(cfg, _channels(model))
        n = cfg.eval.n_samples
        results = _map(_GenerateJob(model, scfg), list(range(n)), args.jobs)
        samples = np.concatenate([r.image.data for r in results])
    if args.reference:
        reference = _load_set(args.reference)
    elif toy is not None:
        reference = toy.sample(len(samples), np.random.default_rng([seed, _REFERENCE_STREAM]))
    else:
        raise UsageError("eval needs --reference images or a toy dataset to draw reference samples from")
    if samples.shape[1:] != reference.shape[1:]:
        raise UsageError(f"sample shape {samples.shape[1:]} does not match reference shape {reference.shape[1:]}")
    out = _prepare_out(cfg)
    h = cfg.hash()
    n = len(samples)
    metrics = [("sliced_wasserstein", sliced_wasserstein(samples, reference, cfg.eval.n_projections,
                                                         np.random.default_rng(seed)))]
    if toy is not None and samples.shape[1:] == toy.resolution:
        mean_err, var_err = gaussian_moment_error(samples, toy, 0)
        metrics += [("mean_err", mean_err), ("var_err", var_err)]
    if len(samples) == len(reference):
        metrics += [
            ("psnr", float(np.mean([psnr(a, b) for a, b in zip(samples, reference)]))),
            ("ssim", float(np.mean([ssim(a, b) for a, b in zip(samples, reference)]))),
        ]
    _write_csv(os.path.join(out, "metrics.csv"), ["metric", "config_hash", "value", "n_samples", "seed"],
               [[m, h, _fmt(v), n, seed] for m, v in metrics])
    for m, v in metrics:
        print(f"{m}: {v:.6g}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "sr": cmd_sr, "bench": cmd_bench, "eval": cmd_eval}


# --- argument parsing ------------------------------------------------------------------


def _ladder(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ladder must be comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("shared options")
    g.add_argument("--config", help="YAML run config")
    g.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)")
    g.add_argument("--seed", type=int, help="run seed (sampler.seed)")
    g.add_argument("--out", help="output directory")
    g.add_argument("--jobs", type=int, default=1, help="worker processes for independent samples")
    g.add_argument("--format", choices=["pgm", "ppm", "raw"], help="image output format")
    g.add_argument("--ladder", type=_ladder, help="resolution ladder, e.g. 8,16,32")
    g.add_argument("--backend", choices=["analytic", "net"])
    g.add_argument("--checkpoint", help="network checkpoint for the net backend")
    g.add_argument("--toy", help="toy dataset name")
    g.add_argument("--image-dir", dest="image_dir", help="directory of training/reference images")
    g.add_argument("--T-f", dest="T_f", type=int)
    g.add_argument("--T-s", dest="T_s", type=int)
    g.add_argument("--delta-ts", dest="delta_ts", type=float)
    g.add_argument("--lam", type=float, help="guidance weight")
    g.add_argument("--n-samples", dest="n_samples", type=int)

    parser = argparse.ArgumentParser(prog="pyramidal-ddpm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train the score network")
    p.add_argument("--steps", type=int, help="optimizer iterations")
    p.add_argument("--no-pe", action="store_true", help="train without positional encoding")
    p.add_argument("--patch-size", dest="patch_size", type=int, help="train on random crops of this size")

    p = sub.add_parser("generate", parents=[common], help="pyramidal generation")
    p.add_argument("--emit-levels", action="store_true", help="write every ladder level")

    p = sub.add_parser("sr", parents=[common], help="guided pyramidal super-resolution")
    p.add_argument("input", help="low-resolution image (PGM, PPM or raw)")
    p.add_argument("--emit-levels", action="store_true", help="also write intermediate levels")

    p = sub.add_parser("bench", parents=[common], help="pixel-weighted sampling cost")
    p.add_argument("--sweep", type=_floats, help="comma-separated delta_ts values")

    p = sub.add_parser("eval", parents=[common], help="sample-quality metrics")
    p.add_argument("--samples", help="directory of samples to score (default: generate)")
    p.add_argument("--reference", help="directory of reference images (default: fresh toy draws)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError, ParameterError, ShapeError) as exc:
        print(f"pyramidal-ddpm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        where = f" (step {exc.step})" if exc.step is not None else ""
        print(f"pyramidal-ddpm {args.command}: numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FileFormatError) as exc:
        print(f"pyramidal-ddpm {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
