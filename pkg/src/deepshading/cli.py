"""Command-line entry point: ``deepshading <subcommand> ...``.

Every subcommand prints one ``key=value`` summary line on success (``params``
prints the bare count).  Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

import argparse
import dataclasses
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset, runtime, scenegen, trainer
from .unet import TABLE1, NetConfig, param_count


class UsageError(Exception):
    pass


def _derive(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _summary(name, **fields):
    parts = [name] + [f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                      for k, v in fields.items()]
    print(" ".join(parts), flush=True)


# -- gen -----------------------------------------------------------------------

def _render_view(job):
    scene_id, view_id, scene_seed, camera, spec = job
    scene = scenegen.make_scene(scenegen.SceneRecipe(scene_seed))
    g = scenegen.raycast_gbuffer(scene, camera)
    gt_seed = _derive(scene_seed, view_id)
    if spec.effect == "ao":
        target = scenegen.ao_ground_truth(scene, camera, spec.radius, spec.spp, gt_seed)
    else:
        target = scenegen.dof_ground_truth(scene, camera, spec.spp, gt_seed)
    return dataset.SampleRecord(dict(g.channels), target, scene_id, view_id, spec.to_dict())


def cmd_gen(args):
    if args.scenes < 1 or args.views < 1 or args.size < 8 or args.size % 8:
        raise UsageError("--scenes and --views must be >= 1 and --size a positive multiple of 8")
    try:
        spec = scenegen.EffectSpec(args.effect, args.radius, args.spp, args.aperture)
    except ValueError as e:
        raise UsageError(str(e)) from None
    aperture = spec.aperture if spec.effect == "dof" else 0.0
    jobs = []
    for s in range(args.scenes):
        scene_seed = _derive(args.seed, s)
        scene = scenegen.make_scene(scenegen.SceneRecipe(scene_seed))
        cams = scenegen.sample_views(scene, args.views, scene_seed, args.size, args.size,
                                     aperture=aperture)
        jobs += [(s, v, scene_seed, c, spec) for v, c in enumerate(cams)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            records = list(pool.map(_render_view, jobs))
    else:
        records = [_render_view(j) for j in jobs]
    test = [args.scenes - 1] if args.scenes >= 2 else []
    entries = [{"id": r.id, "scene_id": r.scene_id, "view_id": r.view_id} for r in records]
    splits = dataset.split(entries, test, val_fraction=args.val_fraction, seed=args.seed)
    dataset.save_dataset(args.out, records, splits)
    _summary("gen", records=len(records), scenes=args.scenes, views=args.views,
             effect=spec.effect, out=args.out)


def cmd_augment(args):
    src = dataset.read_manifest(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dataset.Manifest()
    splits = {s: [] for s in dataset.SPLITS}
    where = {rid: s for s, ids in src.splits.items() for rid in ids}
    for entry in src.records:
        record = dataset.load_record(args.inp, entry, src)
        for a in dataset.augment(record):
            dataset.save_record(out, a, manifest)
            if entry["id"] in where:
                splits[where[entry["id"]]].append(a.id)
    manifest.splits = {s: sorted(v) for s, v in splits.items()}
    dataset.write_manifest(out, manifest)
    _summary("augment", records=len(manifest.records), source=len(src.records), out=args.out)


# -- train ---------------------------------------------------------------------

def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def load_train_config(path) -> trainer.TrainConfig:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from None
    try:
        return trainer.TrainConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training config {path}: {e}") from None


def cmd_train(args):
    base = load_train_config(args.config)
    overrides = {k: v for k, v in (("iterations", args.iterations), ("seed", args.seed))
                 if v is not None}
    base = dataclasses.replace(base, **overrides)
    u0s = args.u0 or [base.net.u0]
    ks = args.kernel_size or [base.net.kernel_size]
    combos = list(itertools.product(u0s, ks))
    out = Path(args.out)
    for u0, k in combos:
        try:
            net = dataclasses.replace(base.net, u0=u0, kernel_size=k)
        except ValueError as e:
            raise UsageError(f"sweep point u0={u0} kernel_size={k}: {e}") from None
        run_dir = out if len(combos) == 1 else out / f"u0_{u0}_k{k}"
        cfg = dataclasses.replace(base, net=net, checkpoint_dir=str(run_dir))
        resume = trainer.load_checkpoint(args.resume, net) if args.resume else None
        result = trainer.train_from_dataset(cfg, args.data, run_dir / "curves.csv", resume)
        model = run_dir / "model.dshd"
        trainer.save_checkpoint(model, result.net, result.optimizer, result.iteration,
                                {"scheme": "counter", "seed": cfg.seed}, cfg.to_dict())
        last = result.curves[-1] if result.curves else {"train_loss": "nan", "val_dssim": ""}
        _summary("train", u0=u0, kernel_size=k, iterations=result.iteration,
                 train_loss=float(last["train_loss"]),
                 val_dssim=float(last["val_dssim"] or "nan"), checkpoint=model)


# -- infer / eval / bench --------------------------------------------------------

def read_gbuffer(directory) -> scenegen.GBuffer:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"G-buffer directory {d} does not exist")
    channels = {p.stem: dataset.read_pfm(p) for p in sorted(d.glob("*.pfm"))
                if p.stem != dataset.TARGET}
    if not channels:
        raise dataset.MissingChannelError(f"no channel files in {d}")
    return scenegen.GBuffer(channels)


def cmd_infer(args):
    if args.rescale <= 0 or args.gamma <= 0:
        raise UsageError("--rescale and --gamma must be positive")
    ckpt = trainer.load_checkpoint(args.checkpoint)
    g = read_gbuffer(args.gbuffer)
    if args.rescale != 1.0:
        g = runtime.rescale_effect_radius(g, args.rescale)
    out = runtime.infer(ckpt.net, g)
    path = Path(args.out)
    if path.suffix.lower() == ".pfm":
        dataset.write_pfm(path, out if out.shape[0] in (1, 3) else out[:1])
    else:
        runtime.tonemap_export(out, path, args.gamma)
    _summary("infer", channels=out.shape[0], height=out.shape[1], width=out.shape[2],
             mean=float(out.mean()), finite=bool(np.all(np.isfinite(out))), out=path)


def cmd_eval(args):
    ckpt = trainer.load_checkpoint(args.checkpoint)
    names = list(ckpt.net.config.attributes) or None
    records = dataset.load_split(args.data, args.split, names)
    if not records:
        raise ValueError(f"split {args.split!r} of {args.data} is empty")
    result = runtime.evaluate(ckpt.net, records, args.report)
    train_records = dataset.load_split(args.data, "train", []) if args.split != "train" else records
    mean = runtime.target_mean(train_records or records)
    base = runtime.constant_baseline(records, mean)
    _summary("eval", split=args.split, records=result["records"],
             mean_ssim=result["mean_ssim"], mean_dssim=result["mean_dssim"],
             baseline_dssim=base["mean_dssim"])


def _resolution(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return w, h


def cmd_bench(args):
    ckpt = trainer.load_checkpoint(args.checkpoint)
    w, h = args.res
    d = ckpt.net.config.divisor
    if w % d or h % d:
        raise UsageError(f"resolution {w}x{h} is not divisible by {d}")
    stats = runtime.benchmark(ckpt.net, w, h, args.warmup, args.iterations)
    _summary("bench", width=w, height=h, iterations=stats["iterations"],
             mean_ms=stats["mean_ms"], median_ms=stats["median_ms"], p95_ms=stats["p95_ms"])


def cmd_params(args):
    if (args.config is None) == (args.preset is None):
        raise UsageError("give exactly one of --config or --preset")
    if args.preset is not None:
        config = TABLE1[args.preset]
    else:
        try:
            d = json.loads(Path(args.config).read_text())
            config = NetConfig.from_dict(d["net"] if "net" in d else d)
        except FileNotFoundError:
            raise UsageError(f"config file {args.config} does not exist") from None
        except (json.JSONDecodeError, TypeError, ValueError) as e:
            raise UsageError(f"invalid network config {args.config}: {e}") from None
    print(param_count(config))


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepshading", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render scenes, G-buffers and ground truth")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--views", type=int, required=True)
    g.add_argument("--effect", choices=("ao", "dof"), default="ao")
    g.add_argument("--radius", type=float, default=0.25)
    g.add_argument("--spp", type=int, default=256)
    g.add_argument("--aperture", type=float, default=0.05)
    g.add_argument("--size", type=int, default=64, help="image width and height")
    g.add_argument("--val-fraction", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("augment", help="apply the eight square symmetries")
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_augment)

    t = sub.add_parser("train", help="train a network from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--u0", type=_int_list, help="comma-separated sweep values")
    t.add_argument("--kernel-size", type=_int_list, help="comma-separated sweep values")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run a checkpoint on a G-buffer directory")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--gbuffer", required=True, help="directory of <channel>.pfm files")
    i.add_argument("--out", required=True, help=".png (tone mapped) or .pfm")
    i.add_argument("--gamma", type=float, default=2.2)
    i.add_argument("--rescale", type=float, default=1.0,
                   help="resolution factor N; divides the effect radius by N")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=dataset.SPLITS, default="test")
    e.add_argument("--report", help="per-record CSV output")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time full-image inference")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--res", type=_resolution, default=(768, 512))
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--iterations", type=int, default=10)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("params", help="print the parameter count of a network config")
    c.add_argument("--config")
    c.add_argument("--preset", choices=sorted(TABLE1))
    c.set_defaults(func=cmd_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.func(args)
    except UsageError as e:
        print(f"deepshading {args.command}: usage error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError, dataset.DatasetError,
            trainer.CheckpointFormatError, trainer.ConfigMismatchError) as e:
        print(f"deepshading {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


def run():
    sys.exit(main())
