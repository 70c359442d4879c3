"""End-to-end denoising, training, benchmarking, and feature inspection."""

from __future__ import annotations

import glob
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import imgio, matching, model, neural, patching, pilot, rng


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss turns non-finite."""


@dataclass
class DenoiseConfig:
    sigma: float = 25.0
    n_patch: int = 20
    stride: int = 10
    k: int = 4
    window: int | None = 20
    aggregation: str = "gaussian"
    sigma_w: float | None = None  # None -> n_patch / 4
    pilot_kind: str = "bm3d-lite"  # "bm3d-lite" | "none" | "external"
    pilot_cfg: pilot.PilotConfig = field(default_factory=pilot.PilotConfig)
    batch: int = 64

    def validate(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.aggregation not in ("gaussian", "mean"):
            raise ValueError(f"aggregation must be gaussian or mean, got {self.aggregation!r}")
        if self.pilot_kind not in ("bm3d-lite", "none", "external"):
            raise ValueError(f"unknown pilot kind {self.pilot_kind!r}")
        if self.sigma_w is not None and self.sigma_w <= 0:
            raise ValueError(f"sigma_w must be > 0, got {self.sigma_w}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        self.match_config().validate()
        self.pilot_cfg.validate()

    def match_config(self) -> matching.MatchConfig:
        return matching.MatchConfig(n_patch=self.n_patch, k=self.k, window=self.window)


def compute_pilot(noisy: np.ndarray, cfg: DenoiseConfig,
                  external: np.ndarray | None = None) -> np.ndarray:
    """The matching/input pilot image for a noisy image under cfg."""
    if cfg.pilot_kind == "bm3d-lite":
        return pilot.bm3d_lite_denoise(noisy, cfg.sigma, cfg.pilot_cfg)
    if cfg.pilot_kind == "none":
        return np.asarray(noisy, dtype=np.float64)
    if external is None:
        raise ValueError("pilot_kind 'external' needs a pilot image")
    external = np.asarray(external, dtype=np.float64)
    if external.shape != noisy.shape:
        raise ValueError(f"pilot shape {external.shape} != image shape {noisy.shape}")
    return external


def _check_net(net: model.Network, cfg: DenoiseConfig) -> None:
    if net.spec.k != cfg.k:
        raise ValueError(f"network k={net.spec.k} but config k={cfg.k}")
    if net.spec.n_patch != cfg.n_patch:
        raise ValueError(
            f"network n_patch={net.spec.n_patch} but config n_patch={cfg.n_patch}"
        )
    if net.spec.sigma_tag != round(cfg.sigma):
        warnings.warn(
            f"network was trained for sigma {net.spec.sigma_tag}, running at {cfg.sigma}",
            stacklevel=3,
        )


def denoise_image(noisy: np.ndarray, net: model.Network, cfg: DenoiseConfig,
                  external_pilot: np.ndarray | None = None):
    """Denoise one grayscale image; returns (output, info).

    info holds the pilot image and per-stage wall times in ms under keys
    ms_pilot, ms_match, ms_net, ms_agg. The whole pass is deterministic:
    block results are computed in batches and deposited in raster order.
    """
    cfg.validate()
    _check_net(net, cfg)
    noisy = np.asarray(noisy, dtype=np.float64)
    h, w = noisy.shape

    t0 = time.perf_counter()
    pilot_img = compute_pilot(noisy, cfg, external_pilot)
    ms_pilot = (time.perf_counter() - t0) * 1e3

    grid = patching.build_grid(h, w, cfg.n_patch, cfg.stride)
    mcfg = cfg.match_config()
    n = cfg.n_patch
    if cfg.aggregation == "gaussian":
        weight = patching.weight_map(n, cfg.sigma_w if cfg.sigma_w is not None else n / 4.0)
    else:
        weight = 1.0
    buf = patching.AggregationBuffer(h, w)
    ms_match = ms_net = ms_agg = 0.0

    for start in range(0, len(grid), cfg.batch):
        chunk = grid[start : start + cfg.batch]
        t0 = time.perf_counter()
        channels = np.empty((len(chunk), 2 * cfg.k, n, n), dtype=np.float64)
        refs = np.empty((len(chunk), n, n), dtype=np.float64)
        for i, ref in enumerate(chunk):
            origins, _ = matching.find_similar(pilot_img, ref, mcfg)
            block = matching.assemble_block(noisy, pilot_img, origins, n)
            channels[i] = block.channels
            refs[i] = block.channels[0]
        ms_match += (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        residual = net.forward_residual(channels)
        ms_net += (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        denoised = refs - residual[:, 0]
        for i, ref in enumerate(chunk):
            buf.deposit(denoised[i], ref, weight)
        ms_agg += (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    out = buf.normalize()
    ms_agg += (time.perf_counter() - t0) * 1e3

    info = {
        "pilot": pilot_img,
        "ms_pilot": ms_pilot,
        "ms_match": ms_match,
        "ms_net": ms_net,
        "ms_agg": ms_agg,
    }
    return out, info


@dataclass
class TrainConfig:
    data_dir: str | None = None
    sigma: float = 25.0
    depth: int = 17
    width: int = 64
    k: int = 4
    n_patch: int = 20
    sample_stride: int | None = None  # None -> n_patch (non-overlapping)
    crop: int = 180
    window: int | None = 20
    batch: int = 32
    iters: int = 2000
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0002
    reg: str = "l2"
    pilot_kind: str = "bm3d-lite"
    pilot_cfg: pilot.PilotConfig = field(default_factory=pilot.PilotConfig)
    seed: int = 0
    log_every: int = 0  # 0 silences progress lines

    def validate(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.batch < 1 or self.iters < 1:
            raise ValueError("batch and iters must be >= 1")
        if self.crop < self.n_patch:
            raise ValueError(f"crop {self.crop} smaller than n_patch {self.n_patch}")
        neural.AdamConfig(self.alpha, self.beta1, self.beta2, self.eps,
                          self.weight_decay, self.reg).validate()
        self.pilot_cfg.validate()

    def spec(self) -> model.NetworkSpec:
        return model.NetworkSpec(depth=self.depth, width=self.width, k=self.k,
                                 n_patch=self.n_patch, sigma_tag=round(self.sigma))


def _augment(img: np.ndarray, aug: int) -> np.ndarray:
    out = np.rot90(img, aug % 4)
    if aug >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape
    s = min(size, h, w)
    r0 = (h - s) // 2
    c0 = (w - s) // 2
    return img[r0 : r0 + s, c0 : c0 + s].copy()


def load_training_images(cfg: TrainConfig) -> list[np.ndarray]:
    if cfg.data_dir is None:
        raise ValueError("training needs data_dir")
    paths = sorted(glob.glob(os.path.join(cfg.data_dir, "*.pgm")))
    if not paths:
        raise ValueError(f"no PGM files under {cfg.data_dir}")
    return [imgio.read_pgm(p) for p in paths]


class _SampleCache:
    """Per-(image, augmentation) pilot and match origins, built once.

    Pilot and matching run on the epoch-0 noise realization and stay
    cached; later epochs refresh only the noisy patches and targets.
    """

    def __init__(self, images: list[np.ndarray], cfg: TrainConfig):
        cfg.validate()
        self.cfg = cfg
        self.crops = [_center_crop(img, cfg.crop) for img in images]
        self.entries: dict[tuple[int, int], tuple] = {}
        stride = cfg.sample_stride if cfg.sample_stride is not None else cfg.n_patch
        self.space: list[tuple[int, int, int, int]] = []
        mcfg = matching.MatchConfig(n_patch=cfg.n_patch, k=cfg.k, window=cfg.window)
        dcfg = DenoiseConfig(sigma=cfg.sigma, n_patch=cfg.n_patch, k=cfg.k,
                             window=cfg.window, pilot_kind=cfg.pilot_kind,
                             pilot_cfg=cfg.pilot_cfg)
        for i, crop in enumerate(self.crops):
            for a in range(8):
                clean = _augment(crop, a)
                noisy0 = clean + imgio.noise_field(clean.shape, cfg.sigma, cfg.seed, (i, a, 0))
                pilot_img = compute_pilot(noisy0, dcfg)
                grid = patching.build_grid(*clean.shape, cfg.n_patch, stride)
                origins = [matching.find_similar(pilot_img, ref, mcfg)[0] for ref in grid]
                self.entries[(i, a)] = (clean, pilot_img, origins)
                for g in range(len(grid)):
                    self.space.append((i, a, g))


def sample_training_blocks(cache: _SampleCache, epoch: int):
    """Yield (PatchBlock, target) for one epoch in seed-shuffled order.

    Targets are the synthesized noise patches, so target + clean equals
    the noisy patch bit for bit. Noise is fresh per epoch through the
    (image, augmentation, epoch) key.
    """
    cfg = cache.cfg
    order = rng.generator(cfg.seed, (rng.TAG_SHUFFLE, epoch)).permutation(len(cache.space))
    noisy_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    n = cfg.n_patch
    for idx in order:
        i, a, g = cache.space[idx]
        clean, pilot_img, origins = cache.entries[(i, a)]
        if (i, a) not in noisy_cache:
            noise = imgio.noise_field(clean.shape, cfg.sigma, cfg.seed, (i, a, epoch))
            noisy_cache[(i, a)] = (clean + noise, noise)
        noisy, noise = noisy_cache[(i, a)]
        block = matching.assemble_block(noisy, pilot_img, origins[g], n)
        r, c = origins[g][0]
        target = noise[r : r + n, c : c + n].copy()
        yield block, target


def smoothed_endpoints(losses, window: int = 20) -> tuple[float, float]:
    """Moving-average loss at the start and end of training."""
    arr = np.asarray(losses, dtype=np.float64)
    w = min(window, len(arr))
    return float(arr[:w].mean()), float(arr[-w:].mean())


def train(cfg: TrainConfig, images: list[np.ndarray] | None = None,
          progress=None) -> tuple[model.Network, list[float]]:
    """Train a residual network at desk scale; returns (net, loss curve).

    The loss is the per-sample L1 on the internal 0..1 residual scale.
    Raises TrainingDivergedError (with per-layer weight norms) when the
    loss turns non-finite.
    """
    cfg.validate()
    if images is None:
        images = load_training_images(cfg)
    cache = _SampleCache(images, cfg)
    net = model.build_network(cfg.spec(), cfg.seed)
    opt = neural.Adam(net.params(), neural.AdamConfig(
        cfg.alpha, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, cfg.reg))
    losses: list[float] = []
    n = cfg.n_patch
    epoch = 0
    stream = sample_training_blocks(cache, epoch)
    x = np.empty((cfg.batch, 2 * cfg.k, n, n), dtype=np.float64)
    t = np.empty((cfg.batch, 1, n, n), dtype=np.float64)
    for it in range(cfg.iters):
        filled = 0
        while filled < cfg.batch:
            try:
                block, target = next(stream)
            except StopIteration:
                epoch += 1
                stream = sample_training_blocks(cache, epoch)
                continue
            x[filled] = block.channels
            t[filled, 0] = target
            filled += 1
        out = net.forward_scaled(x, training=True)
        loss, g = neural.l1_loss(out, (t / 255.0).astype(net.dtype))
        if not np.isfinite(loss):
            norms = {b[0].w.name: float(np.linalg.norm(b[0].w.value)) for b in net.blocks}
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it}; weight norms {norms}"
            )
        net.backward(g)
        opt.step()
        losses.append(loss)
        if progress is not None and cfg.log_every and (it + 1) % cfg.log_every == 0:
            progress(it + 1, loss)
    return net, losses


@dataclass
class BenchRow:
    image: str
    sigma: float
    psnr_noisy: float
    psnr_pilot: float
    psnr_out: float
    ms_match: float
    ms_pilot: float
    ms_net: float
    ms_agg: float


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    CSV_HEADER = "image,sigma,psnr_noisy,psnr_pilot,psnr_bmcnn,ms_match,ms_pilot,ms_net,ms_agg"

    def averages(self) -> dict[float, dict[str, float]]:
        """Arithmetic means of every metric, grouped by sigma."""
        out: dict[float, dict[str, float]] = {}
        for sigma in sorted({r.sigma for r in self.rows}):
            rows = [r for r in self.rows if r.sigma == sigma]
            out[sigma] = {
                name: float(np.mean([getattr(r, name) for r in rows]))
                for name in ("psnr_noisy", "psnr_pilot", "psnr_out",
                             "ms_match", "ms_pilot", "ms_net", "ms_agg")
            }
        return out

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.image},{r.sigma:g},{r.psnr_noisy:.4f},{r.psnr_pilot:.4f},"
                f"{r.psnr_out:.4f},{r.ms_match:.3f},{r.ms_pilot:.3f},"
                f"{r.ms_net:.3f},{r.ms_agg:.3f}"
            )
        return "\n".join(lines) + "\n"


def benchmark(images: list[tuple[str, np.ndarray]], sigmas: list[float],
              nets: dict[int, model.Network], cfg: DenoiseConfig | None = None,
              seed: int = 0) -> BenchReport:
    """PSNR and timing sweep over (image, sigma) pairs.

    nets maps round(sigma) to the network trained for that level; a
    missing level raises ValueError before any work runs.
    """
    for sigma in sigmas:
        if round(sigma) not in nets:
            raise ValueError(f"no network supplied for sigma {sigma}")
    report = BenchReport()
    base = cfg or DenoiseConfig()
    for idx, (name, clean) in enumerate(images):
        for sigma in sigmas:
            run_cfg = DenoiseConfig(
                sigma=sigma, n_patch=base.n_patch, stride=base.stride, k=base.k,
                window=base.window, aggregation=base.aggregation,
                sigma_w=base.sigma_w, pilot_kind=base.pilot_kind,
                pilot_cfg=base.pilot_cfg, batch=base.batch)
            noisy = imgio.add_awgn(clean, sigma, seed, key=(idx, round(sigma)))
            out, info = denoise_image(noisy, nets[round(sigma)], run_cfg)
            report.rows.append(BenchRow(
                image=name, sigma=float(sigma),
                psnr_noisy=imgio.psnr(clean, noisy),
                psnr_pilot=imgio.psnr(clean, info["pilot"]),
                psnr_out=imgio.psnr(clean, out),
                ms_match=info["ms_match"], ms_pilot=info["ms_pilot"],
                ms_net=info["ms_net"], ms_agg=info["ms_agg"]))
    return report


def inspect_features(net: model.Network, block: matching.PatchBlock, layer: int) -> np.ndarray:
    """Post-activation planes of one layer for one block, shape (C, n, n).

    The final layer yields the single residual plane on the 0..255 scale.
    """
    planes = net.forward_planes(block.channels[None, ...], layer)
    return planes[0]


def scale_plane(plane: np.ndarray) -> np.ndarray:
    """Min-max scale a feature plane to 0..255 for PGM dumps."""
    lo = float(plane.min())
    hi = float(plane.max())
    if hi == lo:
        return np.zeros_like(plane)
    return (plane - lo) * (255.0 / (hi - lo))
