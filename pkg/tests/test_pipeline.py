import numpy as np
import pytest

from bmdenoise import imgio, matching, model, pipeline, synthetic
from bmdenoise.model import NetworkSpec, build_network
from bmdenoise.pipeline import (
    BenchReport, BenchRow, DenoiseConfig, TrainConfig, TrainingDivergedError,
    _SampleCache, denoise_image, sample_training_blocks, smoothed_endpoints, train,
)

TOY_DENOISE = dict(sigma=25.0, n_patch=8, stride=4, k=2, window=12)


def toy_net(seed=0, dtype=np.float32):
    return build_network(NetworkSpec(depth=3, width=6, k=2, n_patch=8), seed, dtype)


def small_images(count=2, size=48):
    return [synthetic.make_scene(size, size, seed=40 + i) for i in range(count)]


def test_denoise_config_defaults_and_validation():
    cfg = DenoiseConfig()
    cfg.validate()
    assert cfg.match_config().window == 20
    with pytest.raises(ValueError):
        DenoiseConfig(aggregation="median").validate()
    with pytest.raises(ValueError):
        DenoiseConfig(pilot_kind="bm3d").validate()
    with pytest.raises(ValueError):
        DenoiseConfig(sigma_w=0.0).validate()


def test_net_config_mismatch_is_rejected(scene64):
    net = toy_net()
    cfg = DenoiseConfig(sigma=25.0, n_patch=8, stride=4, k=3, window=12)
    with pytest.raises(ValueError):
        denoise_image(scene64, net, cfg)
    cfg = DenoiseConfig(sigma=25.0, n_patch=10, stride=4, k=2, window=12)
    with pytest.raises(ValueError):
        denoise_image(scene64, net, cfg)


def test_sigma_tag_mismatch_warns(scene64):
    net = toy_net()
    cfg = DenoiseConfig(**{**TOY_DENOISE, "sigma": 50.0, "pilot_kind": "none"})
    with pytest.warns(UserWarning):
        denoise_image(scene64, net, cfg)


def test_zero_network_with_no_pilot_reproduces_noisy(scene64):
    # residual 0 and weights all zero: output must equal the input
    net = model.Network(NetworkSpec(depth=3, width=6, k=2, n_patch=8))
    noisy = imgio.add_awgn(scene64, 25.0, seed=8)
    cfg = DenoiseConfig(**{**TOY_DENOISE, "pilot_kind": "none"})
    out, info = denoise_image(noisy, net, cfg)
    assert np.max(np.abs(out - noisy)) < 1e-6
    assert np.array_equal(info["pilot"], noisy)


def test_denoise_info_reports_timings(scene64):
    noisy = imgio.add_awgn(scene64, 25.0, seed=9)
    out, info = denoise_image(noisy, toy_net(), DenoiseConfig(**TOY_DENOISE))
    assert out.shape == noisy.shape
    for key in ("ms_pilot", "ms_match", "ms_net", "ms_agg"):
        assert info[key] >= 0.0


def test_denoise_deterministic_across_runs(scene64):
    noisy = imgio.add_awgn(scene64, 25.0, seed=10)
    net = toy_net(seed=1)
    cfg = DenoiseConfig(**TOY_DENOISE)
    a, _ = denoise_image(noisy, net, cfg)
    b, _ = denoise_image(noisy, net, cfg)
    assert a.tobytes() == b.tobytes()


def test_denoise_batch_size_does_not_change_result(scene64):
    noisy = imgio.add_awgn(scene64, 25.0, seed=11)
    net = toy_net(seed=2)
    a, _ = denoise_image(noisy, net, DenoiseConfig(**TOY_DENOISE, batch=7))
    b, _ = denoise_image(noisy, net, DenoiseConfig(**TOY_DENOISE, batch=64))
    assert a.tobytes() == b.tobytes()


def test_external_pilot_used_verbatim(scene64):
    noisy = imgio.add_awgn(scene64, 25.0, seed=12)
    ext = scene64.copy()
    cfg = DenoiseConfig(**{**TOY_DENOISE, "pilot_kind": "external"})
    _, info = denoise_image(noisy, toy_net(seed=3), cfg, external_pilot=ext)
    assert np.array_equal(info["pilot"], ext)
    with pytest.raises(ValueError):
        denoise_image(noisy, toy_net(seed=3), cfg)


def test_augment_produces_eight_distinct_views():
    img = np.arange(16.0).reshape(4, 4)
    views = [pipeline._augment(img, a) for a in range(8)]
    seen = {v.tobytes() for v in views}
    assert len(seen) == 8
    assert np.array_equal(views[0], img)
    assert np.array_equal(views[1], np.rot90(img, 1))
    assert np.array_equal(views[4], img[:, ::-1])


def test_center_crop():
    img = np.arange(100.0).reshape(10, 10)
    c = pipeline._center_crop(img, 4)
    assert np.array_equal(c, img[3:7, 3:7])
    assert pipeline._center_crop(img, 99).shape == (10, 10)


def test_load_training_images_sorted(tmp_path):
    synthetic.write_scene_set(tmp_path, count=3, size=32, seed=0)
    cfg = TrainConfig(data_dir=str(tmp_path), crop=32, n_patch=8)
    imgs = pipeline.load_training_images(cfg)
    assert len(imgs) == 3
    with pytest.raises(ValueError):
        pipeline.load_training_images(TrainConfig(data_dir=str(tmp_path / "empty")))


def _toy_train_cfg(**over):
    base = dict(
        data_dir=None, sigma=25.0, depth=3, width=6, k=2, n_patch=8,
        sample_stride=8, crop=32, window=12, batch=8, iters=4, seed=0,
    )
    base.update(over)
    return TrainConfig(**base)


def test_residual_target_identity_is_bit_exact():
    from bmdenoise import rng as seeds

    cfg = _toy_train_cfg()
    cache = _SampleCache(small_images(count=2, size=32), cfg)
    epoch = 0
    order = seeds.generator(cfg.seed, (seeds.TAG_SHUFFLE, epoch)).permutation(len(cache.space))
    n = cfg.n_patch
    for idx, (block, target) in zip(order, sample_training_blocks(cache, epoch)):
        i, a, _ = cache.space[idx]
        clean = cache.entries[(i, a)][0]
        r, c = block.origins[0]
        clean_ref = clean[r : r + n, c : c + n]
        # bit-exact, not merely close: same addition produced both sides
        assert np.array_equal(target + clean_ref, block.channels[0])


def test_sample_stream_is_shuffled_and_epoch_fresh():
    cfg = _toy_train_cfg()
    cache = _SampleCache(small_images(count=1, size=32), cfg)
    first = [t.tobytes() for _, t in sample_training_blocks(cache, epoch=0)]
    again = [t.tobytes() for _, t in sample_training_blocks(cache, epoch=0)]
    other = [t.tobytes() for _, t in sample_training_blocks(cache, epoch=1)]
    assert first == again
    assert sorted(first) != sorted(other)  # fresh noise
    assert len(first) == len(cache.space)


def test_sample_stream_covers_space_once_per_epoch():
    cfg = _toy_train_cfg()
    cache = _SampleCache(small_images(count=1, size=32), cfg)
    refs = [tuple(b.origins[0]) for b, _ in sample_training_blocks(cache, epoch=0)]
    grid_refs = sorted({(i, a, g) for i, a, g in cache.space})
    assert len(refs) == len(grid_refs)


def test_smoothed_endpoints():
    losses = [10.0, 8.0, 6.0, 4.0, 2.0]
    first, last = smoothed_endpoints(losses, window=2)
    assert first == 9.0
    assert last == 3.0
    first, last = smoothed_endpoints(losses, window=50)
    assert first == last == 6.0


def test_train_runs_and_is_deterministic():
    cfg = _toy_train_cfg(iters=4, pilot_kind="none")
    imgs = small_images(count=1, size=32)
    net1, losses1 = train(cfg, images=imgs)
    net2, losses2 = train(cfg, images=imgs)
    assert len(losses1) == 4
    assert all(np.isfinite(l) for l in losses1)
    assert losses1 == losses2
    for p1, p2 in zip(net1.params(), net2.params()):
        assert np.array_equal(p1.value, p2.value)


def test_train_loss_decreases_on_toy_problem():
    cfg = _toy_train_cfg(iters=30, pilot_kind="none", width=8)
    net, losses = train(cfg, images=small_images(count=1, size=32))
    first, last = smoothed_endpoints(losses, window=5)
    assert last < first


def test_train_diverged_error(monkeypatch):
    cfg = _toy_train_cfg(iters=2, pilot_kind="none")

    def broken_loss(est, tgt):
        return float("nan"), np.zeros_like(est)

    monkeypatch.setattr(pipeline.neural, "l1_loss", broken_loss)
    with pytest.raises(TrainingDivergedError) as err:
        train(cfg, images=small_images(count=1, size=32))
    assert "weight norms" in str(err.value)


def test_bench_report_header_and_csv():
    report = BenchReport(rows=[BenchRow(
        image="a.pgm", sigma=25.0, psnr_noisy=20.0, psnr_pilot=28.0,
        psnr_out=29.5, ms_match=1.0, ms_pilot=2.0, ms_net=3.0, ms_agg=0.5)])
    csv = report.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == ("image,sigma,psnr_noisy,psnr_pilot,psnr_bmcnn,"
                        "ms_match,ms_pilot,ms_net,ms_agg")
    assert lines[1].startswith("a.pgm,25,20.0000,28.0000,29.5000,")


def test_bench_averages_group_by_sigma():
    rows = [
        BenchRow("a", 15.0, 24.0, 28.0, 30.0, 1, 1, 1, 1),
        BenchRow("b", 15.0, 26.0, 30.0, 32.0, 1, 1, 1, 1),
        BenchRow("a", 25.0, 20.0, 27.0, 29.0, 1, 1, 1, 1),
    ]
    avg = BenchReport(rows=rows).averages()
    assert set(avg) == {15.0, 25.0}
    assert avg[15.0]["psnr_out"] == 31.0
    assert avg[25.0]["psnr_noisy"] == 20.0


def test_benchmark_requires_all_networks(scene64):
    with pytest.raises(ValueError):
        pipeline.benchmark([("s", scene64)], [15.0, 25.0], {25: toy_net()})


def test_benchmark_tiny_run(scene64):
    cfg = DenoiseConfig(**{**TOY_DENOISE, "pilot_kind": "none"})
    report = pipeline.benchmark([("s", scene64)], [25.0], {25: toy_net(seed=5)}, cfg)
    assert len(report.rows) == 1
    row = report.rows[0]
    assert row.image == "s"
    assert 0.0 < row.psnr_noisy < row.psnr_pilot + 40.0
    assert report.to_csv().count("\n") == 2


def test_inspect_features_shapes(scene64):
    net = toy_net(seed=6)
    noisy = imgio.add_awgn(scene64, 25.0, seed=14)
    origins, _ = matching.find_similar(noisy, (20, 20), matching.MatchConfig(8, 2, 12))
    block = matching.assemble_block(noisy, noisy, origins, 8)
    planes = pipeline.inspect_features(net, block, 1)
    assert planes.shape == (6, 8, 8)
    final = pipeline.inspect_features(net, block, 3)
    assert final.shape == (1, 8, 8)


def test_scale_plane_range():
    p = np.array([[1.0, 2.0], [3.0, 5.0]])
    s = pipeline.scale_plane(p)
    assert s.min() == 0.0 and s.max() == 255.0
    flat = pipeline.scale_plane(np.full((3, 3), 4.0))
    assert np.all(flat == 0.0)
