"""Command-line interface: simulate, reconstruct, train, analyze, ablate.

Every command accepts ``--config FILE`` (``key = value`` lines) and repeated
``--set key=value`` overrides; dedicated flags win over both. Failures exit
with status 1 and a single-line diagnostic on stderr.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import analysis
from .classical import mlem, osem
from .io import Manifest, PairEntry, RunConfig, atomic_write_text, parse_kv, read_grid, write_grid, write_pgm
from .projector import build_parallel_projector
from .simulator import PHANTOM_KINDS, make_phantom, simulate_pair

LOSS_ROWS = (
    ("smooth_l1", (1, 0, 0)),
    ("smooth_l1+freq", (1, 0, 1)),
    ("smooth_l1+ssim", (1, 1, 0)),
    ("smooth_l1+ssim+freq", (1, 1, 1)),
)


def _resolve_config(args, base=None, **flags):
    cfg = base if base is not None else RunConfig()
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = cfg.updated(parse_kv(fh.read(), args.config), args.config)
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return cfg.updated(overrides, "command line") if overrides else cfg


def _system(cfg):
    n_angles, n_bins = cfg.sino_shape
    return build_parallel_projector(cfg.image_shape, n_angles, n_bins, cfg.pixel_size)


def _geometry(cfg):
    return dict(image_shape=list(cfg.image_shape), sino_shape=list(cfg.sino_shape), pixel_size=cfg.pixel_size)


def _log(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- simulate
def cmd_simulate(args):
    cfg = _resolve_config(args, n_pairs=args.n_pairs, seed=args.seed, phantom_kind=args.kind,
                          dose_fraction=args.dose, ac_bias_strength=args.bias)
    if cfg.phantom_kind != "mixed" and cfg.phantom_kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind {cfg.phantom_kind!r}; choose mixed or one of {PHANTOM_KINDS}")
    os.makedirs(args.out, exist_ok=True)
    A = _system(cfg)
    pairs = []
    for i in range(cfg.n_pairs):
        seed = cfg.seed + i
        kind = PHANTOM_KINDS[i % len(PHANTOM_KINDS)] if cfg.phantom_kind == "mixed" else cfg.phantom_kind
        ph = make_phantom(kind, cfg.image_shape, seed)
        pair = simulate_pair(A, ph, cfg.degradation(seed), bias=cfg.ac_bias_strength > 0)
        names = {w: f"{w}_{i:04d}.fpgd" for w in ("truth", "low", "full", "roi")}
        write_grid(os.path.join(args.out, names["truth"]), ph.activity)
        write_grid(os.path.join(args.out, names["low"]), pair.y_low)
        write_grid(os.path.join(args.out, names["full"]), pair.y_full)
        write_grid(os.path.join(args.out, names["roi"]), ph.lesion_mask.astype(np.float64))
        pairs.append(PairEntry(seed, kind, pair.scale, **names))
    man = Manifest(cfg, pairs, args.out)
    path = os.path.join(args.out, "manifest.txt")
    man.write(path)
    print(f"simulated {len(pairs)} pairs -> {path}")


# ---------------------------------------------------------------- reconstruct
def _load_input(args):
    """Return (sinogram, truth or None, calibration divisor, manifest config or None)."""
    if args.manifest:
        man = Manifest.read(args.manifest)
        if not 0 <= args.index < len(man.pairs):
            raise ValueError(f"--index {args.index} out of range for {len(man.pairs)} pairs")
        p = man.pairs[args.index]
        y = read_grid(man.path(p.full if args.arm == "full" else p.low)).astype(np.float64)
        dose = 1.0 if args.arm == "full" else man.config.dose_fraction
        return y, read_grid(man.path(p.truth)).astype(np.float64), dose * p.scale, man.config
    if not args.sinogram:
        raise ValueError("give --sinogram FILE or --manifest FILE --index I")
    y = read_grid(args.sinogram).astype(np.float64)
    truth = read_grid(args.truth).astype(np.float64) if args.truth else None
    return y, truth, 1.0, None


def cmd_reconstruct(args):
    y, truth, calib, base = _load_input(args)
    cfg = _resolve_config(args, base)
    if args.method == "fourierpet":
        if not args.checkpoint:
            raise ValueError("--method fourierpet needs --checkpoint")
        from .net import load_model

        net, ck = load_model(args.checkpoint)
        geo = ck.get("geometry")
        if geo is None:
            raise ValueError(f"{args.checkpoint}: checkpoint carries no geometry")
        if tuple(geo["sino_shape"]) != y.shape:
            raise ValueError(f"sinogram shape {y.shape} does not match checkpoint geometry {tuple(geo['sino_shape'])}")
        A = build_parallel_projector(geo["image_shape"], *geo["sino_shape"], geo["pixel_size"])
        img = net.predict(A, y)
        ref = None if truth is None else truth / truth.max()
    else:
        A = _system(cfg)
        if y.shape != A.sino_shape:
            raise ValueError(f"sinogram shape {y.shape} does not match system geometry {A.sino_shape}")
        img = mlem(A, y, cfg.mlem_iters) if args.method == "mlem" else osem(A, y, cfg.osem_iters, cfg.osem_subsets)
        img = img / calib
        ref = truth
    if args.out:
        write_grid(args.out, img)
    if args.pgm:
        write_pgm(args.pgm, img)
    if ref is not None:
        if ref.shape != img.shape:
            raise ValueError(f"truth shape {ref.shape} does not match reconstruction shape {img.shape}")
        print(f"metrics method={args.method} psnr={analysis.psnr(img, ref):.4f} "
              f"ssim={analysis.ssim(img, ref):.4f} rmse={analysis.rmse(img, ref):.6f}")
    else:
        print(f"reconstructed {img.shape} with {args.method}")


# ---------------------------------------------------------------- train
def _train_to(out, A, Y, X, cfg, log_path):
    from .net import save_model, train

    tmp = f"{log_path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(dict(kind="run_config", config={k: getattr(cfg, k) for k in RunConfig.keys()})) + "\n")
        net, hist = train(A, Y, X, cfg.recon_config(), cfg.train_config(), log=fh)
    os.replace(tmp, log_path)
    save_model(out, net, extra=dict(geometry=_geometry(cfg)), optimizer=hist.optimizer)
    return net, hist


def cmd_train(args):
    man = Manifest.read(args.manifest)
    cfg = _resolve_config(args, man.config, epochs=args.epochs, train_seed=args.seed)
    if not man.pairs:
        raise ValueError(f"{args.manifest}: dataset is empty")
    if len(man.pairs) < 8:
        _log(f"warning: training on only {len(man.pairs)} pairs")
    arrays = man.load_arrays(("truth", "low"))
    A = _system(cfg)
    t0 = time.process_time()
    _, hist = _train_to(args.out, A, arrays["low"], arrays["truth"], cfg, args.log or args.out + ".log.jsonl")
    last = hist.epochs[-1]
    print(f"trained {cfg.epochs} epochs in {time.process_time() - t0:.1f} CPU-s; final loss {last['loss']:.5f}; "
          f"checkpoint -> {args.out}")


# ---------------------------------------------------------------- analyze
def _images_from_manifest(args):
    man = Manifest.read(args.manifest)
    if not 0 <= args.index < len(man.pairs):
        raise ValueError(f"--index {args.index} out of range for {len(man.pairs)} pairs")
    p = man.pairs[args.index]
    cfg = _resolve_config(args, man.config)
    A = _system(cfg)
    low = osem(A, read_grid(man.path(p.low)), cfg.osem_iters, cfg.osem_subsets) / (cfg.dose_fraction * p.scale)
    full = osem(A, read_grid(man.path(p.full)), cfg.osem_iters, cfg.osem_subsets) / p.scale
    return dict(truth=read_grid(man.path(p.truth)), low=low, full=full, roi=read_grid(man.path(p.roi)) > 0.5), cfg


def _need(images, *names):
    missing = [n for n in names if images.get(n) is None]
    if missing:
        raise ValueError(f"this mode needs --{' --'.join(missing)}")


def cmd_analyze(args):
    cfg = _resolve_config(args)
    if args.manifest:
        images, cfg = _images_from_manifest(args)
    else:
        images = {}
    for name in ("truth", "low", "full", "image", "reference"):
        path = getattr(args, name)
        if path:
            images[name] = read_grid(path).astype(np.float64)
    if args.roi:
        images["roi"] = read_grid(args.roi) > 0.5
    records = None
    if args.mode == "swap":
        _need(images, "truth", "low", "full")
        rep = analysis.swap_study(images["truth"], images["low"], images["full"], images.get("roi"))
        print(rep.to_table())
        records = rep.to_records()
    elif args.mode == "profile":
        _need(images, "low", "full")
        prof = analysis.deviation_profile(images["low"], images["full"], args.bands or cfg.n_radial_bands)
        print(prof.to_table())
        records = prof.to_records()
    elif args.mode == "freq-error":
        img = images.get("image", images.get("low"))
        ref = images.get("reference", images.get("full"))
        _need(dict(image=img, reference=ref), "image", "reference")
        fmap = analysis.freq_error_map(img, ref)
        if args.out:
            write_grid(args.out, fmap)
        if args.pgm:
            write_pgm(args.pgm, np.abs(fmap))
        print(f"freq-error mean={fmap.mean():.5f} min={fmap.min():.5f} max={fmap.max():.5f}")
    else:
        img = images.get("image", images.get("low"))
        ref = images.get("reference", images.get("truth"))
        _need(dict(image=img, reference=ref), "image", "reference")
        rec = dict(psnr=analysis.psnr(img, ref), ssim=analysis.ssim(img, ref), rmse=analysis.rmse(img, ref))
        if images.get("roi") is not None:
            rec["suv_max"] = analysis.suv_max(img, images["roi"])
        print(" ".join(f"{k}={v:.6g}" for k, v in rec.items()))
        records = json.dumps(rec)
    if args.records and records is not None:
        atomic_write_text(args.records, records + "\n")


# ---------------------------------------------------------------- ablate
def _sweep_points(sweep, values):
    if sweep in ("K", "N"):
        vals = [int(v) for v in values.split(",")] if values else [1, 2, 3]
        return [(f"{sweep}={v}", {sweep: v}) for v in vals]
    if sweep == "loss":
        base = (0.5, 0.3, 0.01)
        return [(label, dict(loss_weights=tuple(b * m for b, m in zip(base, mask)))) for label, mask in LOSS_ROWS]
    return [(mode, dict(apcm_mode=mode)) for mode in ("targeted", "full_band")]


def cmd_ablate(args):
    from .net import normalize_truth

    train_man = Manifest.read(args.train_manifest)
    test_man = Manifest.read(args.test_manifest)
    base = _resolve_config(args, train_man.config, epochs=args.epochs, channels=args.channels)
    if test_man.config.image_shape != base.image_shape or test_man.config.sino_shape != base.sino_shape:
        raise ValueError(f"test geometry {test_man.config.sino_shape} does not match train geometry {base.sino_shape}")
    tr = train_man.load_arrays(("truth", "low"))
    te = test_man.load_arrays(("truth", "low"))
    truth_n = normalize_truth(te["truth"])
    A = _system(base)
    os.makedirs(args.out, exist_ok=True)

    rows = []
    em = np.stack([osem(A, y, base.osem_iters, base.osem_subsets) / (test_man.config.dose_fraction * p.scale)
                   for y, p in zip(te["low"], test_man.pairs)])
    peaks = te["truth"].reshape(len(em), -1).max(axis=1)[:, None, None]
    rows.append(dict(config="osem-baseline", params=0, **analysis.score_batch(em / peaks, truth_n)))
    for label, change in _sweep_points(args.sweep, args.values):
        cfg = base.updated(change)
        sub = os.path.join(args.out, f"{args.sweep}-{label.replace('=', '')}")
        os.makedirs(sub, exist_ok=True)
        t0 = time.process_time()
        net, hist = _train_to(os.path.join(sub, "model.fptc"), A, tr["low"], tr["truth"], cfg,
                              os.path.join(sub, "train.log.jsonl"))
        cpu = time.process_time() - t0
        scores = analysis.score_batch(net.predict(A, te["low"]), truth_n)
        n_params = int(sum(p.size for p in net.parameters().values()))
        rows.append(dict(config=label, params=n_params, train_cpu_s=round(cpu, 2),
                         loss_weights=list(cfg.loss_weights), **scores))
        _log(f"{label}: psnr={scores['psnr']:.3f} ssim={scores['ssim']:.4f} ({cpu:.0f} CPU-s)")

    lines = [f"{'configuration':<22} {'SSIM':>8} {'PSNR[dB]':>9} {'RMSE':>9} {'params':>8}"]
    for r in rows:
        lines.append(f"{r['config']:<22} {r['ssim']:>8.4f} {r['psnr']:>9.3f} {r['rmse']:>9.5f} {r['params']:>8d}")
    table = "\n".join(lines)
    atomic_write_text(os.path.join(args.out, f"ablation-{args.sweep}.txt"), table + "\n")
    atomic_write_text(os.path.join(args.out, f"ablation-{args.sweep}.jsonl"),
                      "\n".join(json.dumps(r) for r in rows) + "\n")
    print(table)


# ---------------------------------------------------------------- entry point
def build_parser():
    ap = argparse.ArgumentParser(prog="fourierpet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration file (key = value)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = sub.add_parser("simulate", help="phantoms + degradation -> dataset manifest")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--kind", help="phantom kind or 'mixed'")
    p.add_argument("--dose", type=float, help="dose fraction")
    p.add_argument("--bias", type=float, help="AC bias strength")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="sinogram -> image")
    common(p)
    p.add_argument("--method", choices=("mlem", "osem", "fourierpet"), default="osem")
    p.add_argument("--checkpoint")
    p.add_argument("--sinogram", help="FPGD sinogram file")
    p.add_argument("--truth", help="FPGD truth image for a metrics line")
    p.add_argument("--manifest", help="take sinogram and truth from a dataset manifest")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--arm", choices=("low", "full"), default="low")
    p.add_argument("--out", help="FPGD output image")
    p.add_argument("--pgm", help="PGM preview")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="manifest + config -> checkpoint + log")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log (JSON lines); default <out>.log.jsonl")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="spectral diagnostics and metrics")
    common(p)
    p.add_argument("--mode", choices=("swap", "profile", "freq-error", "metrics"), required=True)
    for name in ("truth", "low", "full", "image", "reference", "roi"):
        p.add_argument(f"--{name}", help=f"FPGD {name} image")
    p.add_argument("--manifest", help="use OSEM reconstructions of a manifest pair")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--bands", type=int, help="number of radial rings")
    p.add_argument("--records", help="write line-delimited JSON records here")
    p.add_argument("--out", help="FPGD error map (freq-error)")
    p.add_argument("--pgm", help="PGM preview of |error map|")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="train/evaluate sweeps over one setting")
    common(p)
    p.add_argument("--sweep", choices=("K", "N", "loss", "apcm-mode"), required=True)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out", required=True, help="output directory (one subdirectory per point)")
    p.add_argument("--values", help="comma-separated values for K/N sweeps")
    p.add_argument("--epochs", type=int)
    p.add_argument("--channels", type=int)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError, TypeError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"fourierpet {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
