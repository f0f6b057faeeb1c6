"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The desk-scale learning
criterion trains a model once per session (see conftest); everything else is
self-contained and seeded.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

import tissuetrack as tt
from tissuetrack.correlation import build_pyramid, global_cost_volume, multicrop_cost_volume
from tissuetrack.encoder import FrameEncoder
from tissuetrack.metrics import THRESHOLDS, evaluate_dataset, mte, position_accuracy
from tissuetrack.gls import peak_gls, test_retest as retest_stats, ventricular_length
from tissuetrack.synthdata import CyclicWarp, SceneConfig
from tissuetrack.tracker import TissueTracker, static_tracks, template_indices
from tissuetrack.training import TrainConfig, fit, trajectory_loss


@contextmanager
def criterion(number, name):
    try:
        yield
        print(f"\nACCEPTANCE #{number} {name}: PASS")
    except BaseException:
        print(f"\nACCEPTANCE #{number} {name}: FAIL")
        raise


# ---------------------------------------------------------------------------
# 1. numerical oracles, >= 1000 random small instances each, < 2 min
# ---------------------------------------------------------------------------


def _oracle_bilinear(fmap, x, y):
    d, h, w = fmap.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0 = min(int(math.floor(x)), max(w - 2, 0))
    y0 = min(int(math.floor(y)), max(h - 2, 0))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    wx, wy = x - x0, y - y0
    return (
        fmap[:, y0, x0] * (1 - wx) * (1 - wy)
        + fmap[:, y0, x1] * wx * (1 - wy)
        + fmap[:, y1, x0] * (1 - wx) * wy
        + fmap[:, y1, x1] * wx * wy
    )


def _oracle_cost_volume(f, pyramid, point, radius):
    f = np.asarray(f, dtype=np.float64)
    side = 2 * radius + 1
    out = np.zeros((pyramid.level_count, side, side))
    for lvl_idx, lvl in enumerate(pyramid.levels):
        fmap = lvl[0].numpy().astype(np.float64)
        eff = pyramid.stride * 2**lvl_idx
        cx = (point[0] - (eff - 1) / 2) / eff
        cy = (point[1] - (eff - 1) / 2) / eff
        for j, dy in enumerate(range(-radius, radius + 1)):
            for i, dx in enumerate(range(-radius, radius + 1)):
                vec = _oracle_bilinear(fmap, cx + dx, cy + dy)
                out[lvl_idx, j, i] = float(vec @ f) / math.sqrt(f.shape[0])
    return out


def _pair_error(pred, gt, i, j):
    dx = pred[i, j, 0] - gt[i, j, 0]
    dy = pred[i, j, 1] - gt[i, j, 1]
    return float(np.sqrt(dx * dx + dy * dy))


def test_criterion_1_numerical_oracles():
    with criterion(1, "numerical oracles"):
        start = time.perf_counter()
        rng = np.random.default_rng(2024)

        for _ in range(1000):  # bilinear sampling
            d, h, w = rng.integers(1, 4), rng.integers(2, 8), rng.integers(2, 8)
            fmap = rng.standard_normal((d, h, w))
            x, y = rng.uniform(-1, w + 1), rng.uniform(-1, h + 1)
            got = tt.bilinear_sample(torch.from_numpy(fmap), torch.tensor([x, y]).double())
            assert np.abs(got.numpy() - _oracle_bilinear(fmap, x, y)).max() <= 1e-5

        for _ in range(1000):  # pyramid pooling
            h, w = 2 * rng.integers(1, 5), 2 * rng.integers(1, 5)
            fmap = rng.standard_normal((2, h, w))
            lvl1 = build_pyramid(torch.from_numpy(fmap), 2).levels[1][0].numpy()
            for c in range(2):
                for i in range(h // 2):
                    for j in range(w // 2):
                        ref = fmap[c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean()
                        assert abs(lvl1[c, i, j] - ref) <= 1e-5

        for builder in (global_cost_volume, multicrop_cost_volume):  # both cost volumes
            for _ in range(1000):
                d = int(rng.integers(2, 6))
                fmap = rng.standard_normal((d, 8, 8))
                f = rng.standard_normal(d)
                stride = int(rng.choice([1, 2, 8]))
                pyr = build_pyramid(torch.from_numpy(fmap), 2, stride=stride)
                pt = (rng.uniform(0, 8 * stride), rng.uniform(0, 8 * stride))
                cv = builder(torch.from_numpy(f), pyr, pt, radius=2)
                ref = _oracle_cost_volume(f, pyr, pt, radius=2)
                assert np.abs(cv.scores.numpy() - ref).max() <= 1e-5

        for _ in range(1000):  # trajectory loss
            n, s, iters = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
            gt = rng.uniform(0, 10, (n, s, 2))
            history = [rng.uniform(0, 10, (n, s, 2)) for _ in range(iters)]
            got = float(trajectory_loss(history, gt, gamma=0.8))
            ref = sum(
                0.8 ** (iters - 1 - i) * np.abs(h - gt).sum(-1).mean()
                for i, h in enumerate(history)
            )
            assert abs(got - ref) <= 1e-5

        for _ in range(1000):  # position accuracy (exact) and MTE (exact)
            n, s = int(rng.integers(1, 5)), int(rng.integers(1, 6))
            gt = rng.uniform(0, 30, (n, s, 2))
            pred = gt + rng.normal(0, 4, (n, s, 2))
            errs = sorted(_pair_error(pred, gt, i, j) for i in range(n) for j in range(s))
            for x in THRESHOLDS:
                hits = sum(e <= x for e in errs)
                assert position_accuracy(pred, gt, x) == 100.0 * hits / len(errs)
            m = len(errs)
            ref_mte = errs[m // 2] if m % 2 else (errs[m // 2 - 1] + errs[m // 2]) / 2.0
            assert mte(pred, gt) == ref_mte

        for _ in range(1000):  # ventricular length
            m = int(rng.integers(2, 10))
            pts = rng.uniform(0, 100, (m, 2))
            ref = sum(math.dist(pts[i], pts[i + 1]) for i in range(m - 1))
            assert abs(ventricular_length(pts) - ref) <= 1e-5

        elapsed = time.perf_counter() - start
        assert elapsed < 120.0, f"oracle battery took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 2. gradient checks, < 5 min
# ---------------------------------------------------------------------------


def test_criterion_2_gradient_checks():
    with criterion(2, "gradient checks"):
        start = time.perf_counter()
        rng = np.random.default_rng(77)

        # bilinear_sample wrt point coordinates: <= 1e-4 absolute
        fmap = torch.from_numpy(rng.standard_normal((4, 9, 9)))
        readout = torch.from_numpy(rng.standard_normal(4))
        for _ in range(25):
            pt = torch.tensor(
                [rng.uniform(0.5, 7.5), rng.uniform(0.5, 7.5)], requires_grad=True
            )
            (tt.bilinear_sample(fmap, pt) * readout).sum().backward()
            eps = 1e-4
            for axis in range(2):
                shift = torch.zeros(2)
                shift[axis] = eps
                hi = (tt.bilinear_sample(fmap, pt.detach() + shift) * readout).sum()
                lo = (tt.bilinear_sample(fmap, pt.detach() - shift) * readout).sum()
                fd = (hi - lo).item() / (2 * eps)
                assert abs(fd - pt.grad[axis].item()) <= 1e-4

        # encoder readout wrt input pixels on an 8x8 toy: <= 1e-3 relative
        torch.manual_seed(1)
        enc = FrameEncoder().double()
        x = torch.from_numpy(rng.random((1, 2, 8, 8)))
        with torch.no_grad():
            shape = enc(x, compute_coarse=False)[0].shape
        ro = torch.from_numpy(rng.standard_normal(tuple(shape)))
        xg = x.clone().requires_grad_(True)
        (enc(xg, compute_coarse=False)[0] * ro).sum().backward()
        auto = xg.grad.clone()
        eps = 1e-5
        fd = torch.zeros_like(x)
        for c in range(2):
            for i in range(8):
                for j in range(8):
                    hi = x.clone()
                    hi[0, c, i, j] += eps
                    lo = x.clone()
                    lo[0, c, i, j] -= eps
                    with torch.no_grad():
                        fd[0, c, i, j] = (
                            (enc(hi, compute_coarse=False)[0] * ro).sum()
                            - (enc(lo, compute_coarse=False)[0] * ro).sum()
                        ) / (2 * eps)
        rel = torch.linalg.norm(fd - auto) / torch.linalg.norm(auto)
        assert rel.item() <= 1e-3

        # trajectory_loss wrt predictions, away from L1 kinks: <= 1e-4 relative
        gt = torch.from_numpy(rng.uniform(0, 5, (2, 3, 2)))
        pred = torch.from_numpy(rng.uniform(6, 9, (2, 3, 2))).requires_grad_(True)
        loss = trajectory_loss([pred], gt, gamma=0.8)
        loss.backward()
        eps = 1e-3
        for n in range(2):
            for s in range(3):
                for c in range(2):
                    hi = pred.detach().clone()
                    hi[n, s, c] += eps
                    lo = pred.detach().clone()
                    lo[n, s, c] -= eps
                    fd = (
                        float(trajectory_loss([hi], gt, gamma=0.8))
                        - float(trajectory_loss([lo], gt, gamma=0.8))
                    ) / (2 * eps)
                    ref = pred.grad[n, s, c].item()
                    assert abs(fd - ref) / max(abs(ref), 1e-8) <= 1e-4

        # composite end-to-end spot check on a toy model (16x16, S=4): <= 1e-2 rel
        torch.manual_seed(5)
        toy = TissueTracker(
            channels=8,
            levels=2,
            radius=2,
            iterations=2,
            coarse_hidden=16,
            coarse_blocks=2,
            resolution=None,
        ).double()
        frames = torch.from_numpy(rng.random((4, 16, 16)))
        queries = torch.from_numpy(rng.uniform(4, 12, (2, 2)))
        gt_t = torch.from_numpy(rng.uniform(4, 12, (2, 4, 2)))

        def loss_of(fr):
            state = toy(fr, queries)
            return trajectory_loss(state.history, gt_t, gamma=0.8)

        fg = frames.clone().requires_grad_(True)
        loss_of(fg).backward()
        auto = fg.grad.clone()
        eps = 1e-5
        picks = [
            (int(rng.integers(0, 4)), int(rng.integers(0, 16)), int(rng.integers(0, 16)))
            for _ in range(30)
        ]
        fd_v, auto_v = [], []
        for s, i, j in picks:
            hi = frames.clone()
            hi[s, i, j] += eps
            lo = frames.clone()
            lo[s, i, j] -= eps
            with torch.no_grad():
                fd_v.append((loss_of(hi) - loss_of(lo)).item() / (2 * eps))
            auto_v.append(auto[s, i, j].item())
        fd_v, auto_v = np.array(fd_v), np.array(auto_v)
        rel = np.linalg.norm(fd_v - auto_v) / np.linalg.norm(auto_v)
        assert rel <= 1e-2

        elapsed = time.perf_counter() - start
        assert elapsed < 300.0, f"gradient battery took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 3. desk-scale learning
# ---------------------------------------------------------------------------


def test_criterion_3_desk_scale_learning(
    trained_model, untrained_model, desk_scenes, training_info
):
    with criterion(3, "desk-scale learning"):
        assert training_info["wall_time"] <= 4 * 3600.0
        test_split = desk_scenes["test"]
        trained = evaluate_dataset(trained_model.track, test_split, measure_time=False)
        untrained = evaluate_dataset(untrained_model.track, test_split, measure_time=False)
        static = evaluate_dataset(
            lambda seq, q: static_tracks(q, seq.frame_count), test_split, measure_time=False
        )
        print(
            f"\n  trained {trained.delta_avg:.1f} | untrained {untrained.delta_avg:.1f} "
            f"| static {static.delta_avg:.1f} | MTE {trained.mte:.2f} vs {static.mte:.2f}"
        )
        assert trained.delta_avg >= untrained.delta_avg + 20.0
        assert trained.delta_avg >= static.delta_avg + 15.0
        assert trained.mte < static.mte


# ---------------------------------------------------------------------------
# 4. architectural contracts
# ---------------------------------------------------------------------------


def test_criterion_4_architectural_contracts():
    with criterion(4, "architectural contracts"):
        torch.manual_seed(3)
        model = TissueTracker(resolution=None)
        rng = np.random.default_rng(8)
        frames = torch.from_numpy(rng.random((8, 64, 64)).astype(np.float32))
        queries = torch.from_numpy(rng.uniform(8, 56, (6, 2)).astype(np.float32))

        with torch.no_grad():
            state = model(frames, queries)

        # frame-0 anchoring, exact, at every iteration
        for tr in state.history:
            assert torch.equal(tr[:, 0], queries)

        # I=4 iterations with history length 5
        assert model.iterations == 4
        assert state.iteration == 4
        assert len(state.history) == 5

        # permutation equivariance, exact
        perm = torch.randperm(6)
        with torch.no_grad():
            permuted = model(frames, queries[perm]).tracks
        assert torch.equal(state.tracks[perm], permuted)

        # zero-update additivity, exact
        with torch.no_grad():
            for p in model.fine_head.net.out.parameters():
                p.zero_()
            zeroed = model(frames, queries)
        assert torch.equal(zeroed.tracks, zeroed.history[0])

        # template clamping
        assert template_indices(0) == (0, 0, 0)
        assert template_indices(10) == (0, 8, 6)
        assert template_indices(3) == (0, 1, 0)


# ---------------------------------------------------------------------------
# 5. GLS correctness
# ---------------------------------------------------------------------------


def test_criterion_5_gls_correctness():
    with criterion(5, "GLS correctness"):
        for amplitude in (0.05, 0.15, 0.25):
            cfg = SceneConfig(
                resolution=(64, 64), frames=16, amplitude=amplitude, rotation=0.03
            )
            warp = CyclicWarp(cfg)
            ys = np.linspace(12, 52, 9)
            poly = np.stack([np.full_like(ys, 31.5), ys], axis=-1)
            report = peak_gls(warp.apply_all(poly))
            assert abs(report.peak_gls - (-100.0 * amplitude)) <= 0.1

        stats = retest_stats([(1.0, 0.0), (0.0, 1.0)])
        assert stats.mu == 0.0
        assert stats.sigma == pytest.approx(math.sqrt(2.0), abs=1e-12)
        assert stats.mad == 1.0
        stats = retest_stats([(-18.0, -17.0), (-20.0, -21.5), (-19.0, -19.0)])
        d = np.array([-1.0, 1.5, 0.0])
        assert stats.mu == pytest.approx(d.mean(), abs=1e-12)
        assert stats.sigma == pytest.approx(d.std(ddof=1), abs=1e-12)
        assert stats.mad == pytest.approx(np.abs(d).mean(), abs=1e-12)

        rng = np.random.default_rng(21)
        tracks = rng.uniform(0, 50, (6, 9, 2))
        theta = 1.1
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        moved = tracks @ rot.T + np.array([40.0, -7.0])
        a, b = peak_gls(tracks).peak_gls, peak_gls(moved).peak_gls
        assert abs(b - a) <= 1e-9 * max(abs(a), 1.0)


# ---------------------------------------------------------------------------
# 6. monotone threshold curve
# ---------------------------------------------------------------------------


def test_criterion_6_monotone_threshold_curve():
    with criterion(6, "monotone threshold curve"):
        rng = np.random.default_rng(33)
        for _ in range(1000):
            n, s = int(rng.integers(1, 5)), int(rng.integers(1, 6))
            gt = rng.uniform(0, 64, (n, s, 2))
            pred = gt + rng.normal(0, rng.uniform(0, 20), (n, s, 2))
            vals = [position_accuracy(pred, gt, x) for x in THRESHOLDS]
            assert all(a <= b for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# 7. reproducibility
# ---------------------------------------------------------------------------


def test_criterion_7_reproducibility(tmp_path):
    with criterion(7, "reproducibility"):
        cfg = tt.BenchmarkConfig(
            resolution=(64, 64), frames_range=(4, 6), points_range=(3, 4), seed=99
        )
        tt.make_benchmark(tmp_path / "a", 6, cfg)
        tt.make_benchmark(tmp_path / "b", 6, cfg)
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (
            tmp_path / "b" / "manifest.json"
        ).read_bytes()
        png = "scene_0002/frames/0001.png"
        assert (tmp_path / "a" / png).read_bytes() == (tmp_path / "b" / png).read_bytes()

        bench = tt.Benchmark(tmp_path / "a")
        scenes = bench.load_split("train")
        logs = []
        for run in ("r1", "r2"):
            torch.manual_seed(123)
            model = TissueTracker(resolution=None)
            result = fit(
                model,
                scenes,
                [],
                TrainConfig(phases=((1, 6),), seed=31),
                tmp_path / run,
            )
            logs.append(result.log_path.read_text())
        assert logs[0] == logs[1]
