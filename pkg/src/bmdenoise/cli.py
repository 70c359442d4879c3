"""Command-line interface.

Exit codes: 0 success, 1 usage, 2 data or format problem, 3 numerical
failure. Diagnostics go to stderr; results go to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import imgio, kernels, matching, model, patching, pilot, pipeline, rng

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_SEED = 1234


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _window_arg(text: str):
    return None if text == "full" else int(text)


def _ref_arg(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected ROW,COL, got {text!r}")
    return int(parts[0]), int(parts[1])


def _sigma_net_arg(text: str) -> tuple[int, str]:
    if "=" not in text:
        raise ValueError(f"expected SIGMA=PATH, got {text!r}")
    sigma, path = text.split("=", 1)
    return int(sigma), path


def _read_image(path: str) -> np.ndarray:
    if path.lower().endswith(".pfm"):
        return imgio.read_pfm(path)
    return imgio.read_pgm(path)


def _write_image(path: str, img: np.ndarray) -> None:
    if path.lower().endswith(".pfm"):
        imgio.write_pfm(path, img)
    else:
        imgio.write_pgm(path, img)


def _pilot_cfg(args) -> pilot.PilotConfig:
    return pilot.PilotConfig(n_patch=args.pilot_n_patch, k=args.pilot_k,
                             stride=args.pilot_stride, window=args.pilot_window,
                             lam=args.pilot_lam)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help="base seed for every stochastic stage")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("BMDENOISE_THREADS", "1")),
                   help="JIT worker count (results do not depend on it)")
    p.add_argument("--deterministic", action="store_true",
                   help="assert bit-reproducible execution (always on; kept explicit)")
    p.add_argument("--dump-config", action="store_true",
                   help="print the resolved configuration as JSON and exit")


def _add_pilot_knobs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pilot", default="bm3d-lite", choices=["bm3d-lite", "none", "external"])
    p.add_argument("--pilot-image", default=None, help="pilot file for --pilot external")
    p.add_argument("--pilot-n-patch", type=int, default=8)
    p.add_argument("--pilot-k", type=int, default=8)
    p.add_argument("--pilot-stride", type=int, default=4)
    p.add_argument("--pilot-window", type=_window_arg, default=20)
    p.add_argument("--pilot-lam", type=float, default=2.7)


def _dump(cfg: dict) -> int:
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_denoise(args) -> int:
    net = model.load_weights(args.weights)
    sigma = args.sigma if args.sigma is not None else float(net.spec.sigma_tag)
    cfg = pipeline.DenoiseConfig(
        sigma=sigma,
        n_patch=args.n_patch if args.n_patch is not None else net.spec.n_patch,
        stride=args.stride,
        k=args.k if args.k is not None else net.spec.k,
        window=args.window,
        aggregation=args.agg,
        sigma_w=args.sigma_w,
        pilot_kind=args.pilot,
        pilot_cfg=_pilot_cfg(args),
        batch=args.batch,
    )
    if args.dump_config:
        return _dump({
            "command": "denoise", "input": args.input, "output": args.output,
            "weights": args.weights, "clean": args.clean, "seed": args.seed,
            "threads": args.threads, "deterministic": args.deterministic,
            "sigma": cfg.sigma, "n_patch": cfg.n_patch, "stride": cfg.stride,
            "k": cfg.k, "window": cfg.window, "aggregation": cfg.aggregation,
            "sigma_w": cfg.sigma_w, "batch": cfg.batch, "pilot": cfg.pilot_kind,
            "pilot_image": args.pilot_image,
            "pilot_n_patch": cfg.pilot_cfg.n_patch, "pilot_k": cfg.pilot_cfg.k,
            "pilot_stride": cfg.pilot_cfg.stride, "pilot_window": cfg.pilot_cfg.window,
            "pilot_lam": cfg.pilot_cfg.lam,
        })
    if args.pilot == "external" and args.pilot_image is None:
        print("error: --pilot external needs --pilot-image", file=sys.stderr)
        return EXIT_USAGE
    noisy = _read_image(args.input)
    external = _read_image(args.pilot_image) if args.pilot_image else None
    out, info = pipeline.denoise_image(noisy, net, cfg, external)
    _write_image(args.output, out)
    print(
        f"pilot {info['ms_pilot']:.1f} ms, match {info['ms_match']:.1f} ms, "
        f"net {info['ms_net']:.1f} ms, agg {info['ms_agg']:.1f} ms",
        file=sys.stderr,
    )
    if args.clean:
        clean = _read_image(args.clean)
        print(f"psnr_noisy {imgio.psnr(clean, noisy):.4f}")
        print(f"psnr_pilot {imgio.psnr(clean, info['pilot']):.4f}")
        print(f"psnr_out {imgio.psnr(clean, out):.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = pipeline.TrainConfig(
        data_dir=args.data, sigma=args.sigma, depth=args.depth, width=args.width,
        k=args.k, n_patch=args.n_patch, sample_stride=args.sample_stride,
        crop=args.crop, window=args.window, batch=args.batch, iters=args.iters,
        alpha=args.lr, beta1=args.beta1, beta2=args.beta2, eps=args.eps,
        weight_decay=args.weight_decay, reg=args.reg, pilot_kind=args.pilot,
        pilot_cfg=_pilot_cfg(args), seed=args.seed, log_every=args.log_every,
    )
    if args.dump_config:
        return _dump({
            "command": "train", "data": args.data, "output": args.output,
            "loss_log": args.loss_log, "threads": args.threads,
            "deterministic": args.deterministic, "sigma": cfg.sigma,
            "depth": cfg.depth, "width": cfg.width, "k": cfg.k,
            "n_patch": cfg.n_patch, "sample_stride": cfg.sample_stride,
            "crop": cfg.crop, "window": cfg.window, "batch": cfg.batch,
            "iters": cfg.iters, "lr": cfg.alpha, "beta1": cfg.beta1,
            "beta2": cfg.beta2, "eps": cfg.eps, "weight_decay": cfg.weight_decay,
            "reg": cfg.reg, "pilot": cfg.pilot_kind, "seed": cfg.seed,
            "log_every": cfg.log_every,
        })

    def progress(it, loss):
        print(f"iter {it}/{cfg.iters} loss {loss:.5f}", file=sys.stderr)

    net, losses = pipeline.train(cfg, progress=progress)
    model.save_weights(args.output, net)
    if args.loss_log:
        with open(args.loss_log, "w") as fh:
            fh.writelines(f"{v:.8f}\n" for v in losses)
    first, last = pipeline.smoothed_endpoints(losses)
    print(f"smoothed loss {first:.5f} -> {last:.5f}")
    print(f"wrote {args.output}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    nets_spec = dict(args.weights or [])
    sigmas = args.sigmas if args.sigmas is not None else sorted(nets_spec)
    cfg = pipeline.DenoiseConfig(
        n_patch=args.n_patch if args.n_patch is not None else 20,
        stride=args.stride, k=args.k if args.k is not None else 4,
        window=args.window, aggregation=args.agg, sigma_w=args.sigma_w,
        pilot_kind=args.pilot, pilot_cfg=_pilot_cfg(args), batch=args.batch)
    if args.dump_config:
        return _dump({
            "command": "bench", "images": args.images,
            "weights": {s: p for s, p in nets_spec.items()}, "sigmas": sigmas,
            "csv": args.csv, "seed": args.seed, "threads": args.threads,
            "stride": cfg.stride, "window": cfg.window, "aggregation": cfg.aggregation,
            "pilot": cfg.pilot_kind, "batch": cfg.batch,
        })
    for sigma in sigmas:
        if round(sigma) not in nets_spec:
            print(f"error: no network supplied for sigma {sigma}", file=sys.stderr)
            return EXIT_DATA
    nets = {s: model.load_weights(p) for s, p in nets_spec.items()}
    images = [(os.path.splitext(os.path.basename(p))[0], _read_image(p))
              for p in args.images]
    report = pipeline.benchmark(images, sigmas, nets, cfg, seed=args.seed)
    csv_text = report.to_csv()
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(csv_text)
        print(f"wrote {args.csv}", file=sys.stderr)
    else:
        sys.stdout.write(csv_text)
    for sigma, avg in report.averages().items():
        print(
            f"sigma {sigma:g}: psnr_noisy {avg['psnr_noisy']:.2f} "
            f"psnr_pilot {avg['psnr_pilot']:.2f} psnr_out {avg['psnr_out']:.2f}",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_match(args) -> int:
    if args.dump_config:
        return _dump({
            "command": "match", "image": args.image, "ref": list(args.ref),
            "n_patch": args.n_patch, "k": args.k, "window": args.window,
        })
    image = _read_image(args.image)
    cfg = matching.MatchConfig(n_patch=args.n_patch, k=args.k, window=args.window)
    origins, dists = matching.find_similar(image, args.ref, cfg)
    for (r, c), d in zip(origins, dists):
        print(f"{r} {c} {d:g}")
    return EXIT_OK


def cmd_pilot(args) -> int:
    cfg = pilot.PilotConfig(n_patch=args.n_patch, k=args.k, stride=args.stride,
                            window=args.window, lam=args.lam)
    if args.dump_config:
        return _dump({
            "command": "pilot", "input": args.input, "output": args.output,
            "sigma": args.sigma, "n_patch": cfg.n_patch, "k": cfg.k,
            "stride": cfg.stride, "window": cfg.window, "lam": cfg.lam,
        })
    noisy = _read_image(args.input)
    out = pilot.bm3d_lite_denoise(noisy, args.sigma, cfg)
    _write_image(args.output, out)
    if args.clean:
        clean = _read_image(args.clean)
        print(f"psnr_noisy {imgio.psnr(clean, noisy):.4f}")
        print(f"psnr_pilot {imgio.psnr(clean, out):.4f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    net = model.load_weights(args.weights)
    sigma = args.sigma if args.sigma is not None else float(net.spec.sigma_tag)
    cfg = pipeline.DenoiseConfig(
        sigma=sigma, n_patch=net.spec.n_patch, k=net.spec.k, window=args.window,
        pilot_kind=args.pilot, pilot_cfg=_pilot_cfg(args))
    if args.dump_config:
        return _dump({
            "command": "inspect", "input": args.input, "weights": args.weights,
            "layer": args.layer, "ref": list(args.ref) if args.ref else None,
            "out_dir": args.out_dir, "sigma": sigma, "pilot": args.pilot,
        })
    noisy = _read_image(args.input)
    external = _read_image(args.pilot_image) if args.pilot_image else None
    pilot_img = pipeline.compute_pilot(noisy, cfg, external)
    n = net.spec.n_patch
    h, w = noisy.shape
    ref = args.ref if args.ref is not None else ((h - n) // 2, (w - n) // 2)
    origins, _ = matching.find_similar(pilot_img, ref, cfg.match_config())
    block = matching.assemble_block(noisy, pilot_img, origins, n)
    planes = pipeline.inspect_features(net, block, args.layer)
    os.makedirs(args.out_dir, exist_ok=True)
    for c in range(planes.shape[0]):
        path = os.path.join(args.out_dir, f"layer{args.layer:02d}_plane{c:03d}.pgm")
        imgio.write_pgm(path, pipeline.scale_plane(planes[c]))
    print(f"wrote {planes.shape[0]} planes to {args.out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.dump_config:
        return _dump({
            "command": "gradcheck", "depth": args.depth, "width": args.width,
            "k": args.k, "n_patch": args.n_patch, "seeds": args.seeds,
            "h": args.h, "tol": args.tol,
        })
    from . import neural

    spec = model.NetworkSpec(depth=args.depth, width=args.width, k=args.k,
                             n_patch=args.n_patch, sigma_tag=25)
    worst = 0.0
    for seed in range(args.seeds):
        net = model.build_network(spec, seed, dtype=np.float64)
        gen = rng.generator(seed, (rng.TAG_DATA, 99))
        x = gen.uniform(0.1, 0.9, size=(1, 2 * args.k, args.n_patch, args.n_patch))
        target = gen.uniform(-0.5, 0.5, size=(1, 1, args.n_patch, args.n_patch))
        report = neural.gradient_check(net, x, target, h=args.h)
        top = max(report, key=report.get)
        print(f"seed {seed}: max rel err {report[top]:.3e} ({top})")
        worst = max(worst, report[top])
    if worst > args.tol:
        print(f"error: rel err {worst:.3e} exceeds tol {args.tol:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="bmdenoise",
                     description="Block-matching residual-CNN grayscale denoiser")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="denoise one image with a trained network")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--weights", "-w", required=True)
    p.add_argument("--sigma", type=float, default=None,
                   help="noise level; defaults to the weight file tag")
    p.add_argument("--clean", default=None, help="clean reference; prints PSNR")
    p.add_argument("--n-patch", type=int, default=None)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--window", type=_window_arg, default=20)
    p.add_argument("--agg", choices=["gaussian", "mean"], default="gaussian")
    p.add_argument("--sigma-w", type=float, default=None)
    p.add_argument("--batch", type=int, default=64)
    _add_pilot_knobs(p)
    _add_common(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("train", help="train a residual network at desk scale")
    p.add_argument("--data", required=True, help="directory of PGM crops")
    p.add_argument("--output", "-o", required=True, help="weight file to write")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--depth", type=int, default=17)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n-patch", type=int, default=20)
    p.add_argument("--sample-stride", type=int, default=None)
    p.add_argument("--crop", type=int, default=180)
    p.add_argument("--window", type=_window_arg, default=20)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--weight-decay", type=float, default=0.0002)
    p.add_argument("--reg", choices=["l1", "l2"], default="l2")
    p.add_argument("--loss-log", default=None, help="write one loss per line")
    p.add_argument("--log-every", type=int, default=100)
    _add_pilot_knobs(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="PSNR/timing sweep over images and noise levels")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--weights", type=_sigma_net_arg, action="append",
                   metavar="SIGMA=PATH", required=True)
    p.add_argument("--sigmas", type=lambda s: [float(x) for x in s.split(",")],
                   default=None)
    p.add_argument("--csv", default=None, help="CSV path (default stdout)")
    p.add_argument("--n-patch", type=int, default=None)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--window", type=_window_arg, default=20)
    p.add_argument("--agg", choices=["gaussian", "mean"], default="gaussian")
    p.add_argument("--sigma-w", type=float, default=None)
    p.add_argument("--batch", type=int, default=64)
    _add_pilot_knobs(p)
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("match", help="print the k best matches for one reference")
    p.add_argument("--image", required=True, help="image searched (the pilot)")
    p.add_argument("--ref", type=_ref_arg, required=True, metavar="ROW,COL")
    p.add_argument("--n-patch", type=int, default=20)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--window", type=_window_arg, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("pilot", help="run the collaborative-filtering pilot alone")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--clean", default=None, help="clean reference; prints PSNR")
    p.add_argument("--n-patch", type=int, default=8)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--window", type=_window_arg, default=20)
    p.add_argument("--lam", type=float, default=2.7)
    _add_common(p)
    p.set_defaults(func=cmd_pilot)

    p = sub.add_parser("inspect", help="dump feature planes of one layer as PGMs")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--weights", "-w", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--ref", type=_ref_arg, default=None, metavar="ROW,COL")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--window", type=_window_arg, default=20)
    _add_pilot_knobs(p)
    _add_common(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n-patch", type=int, default=8)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_OK
    kernels.set_threads(args.threads)
    try:
        return args.func(args)
    except pipeline.TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (imgio.ImageFormatError, model.WeightFormatError, patching.CoverageError,
            FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
