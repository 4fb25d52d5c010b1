"""Acceptance suite: one test per criterion, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
Tolerances are pinned in the assertions; nothing is calibrated at
runtime except wall-clock throughput, which asserts a fixed floor.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from evpose import cli
from evpose import events as ev
from evpose import gating
from evpose import metrics as met
from evpose import pose_math as pm
from evpose import representations as rep
from evpose import simulator as sim

from oracles import random_camera, random_stream, tore_brute_force

DAVIS = ev.SensorGeometry(width=346, height=260)
TAU = 5_000_000


@contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"\n[criterion {number:02d}] FAIL {description}")
        raise
    print(f"\n[criterion {number:02d}] PASS {description}")


class ScriptedBackend:
    """Offset-indexed score vector, identical for every invocation."""

    def __init__(self, scores, geometry):
        self.scores = np.asarray(scores, dtype=np.float64)
        self.horizon = len(self.scores)
        self.geometry = geometry

    def predict(self, vol):
        masks = np.ones((self.horizon, self.geometry.height, self.geometry.width),
                        dtype=bool)
        return gating.MaskPlan(masks=masks, scores=self.scores)


def tiny_volumes(count, geometry=ev.SensorGeometry(4, 4)):
    return [rep.ToreVolume(geometry=geometry,
                           data=np.zeros((2, geometry.height, geometry.width),
                                         dtype=np.float32), query_time_us=i)
            for i in range(count)]


def test_01_tore_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    sizes = np.concatenate([
        rng.integers(0, 2000, 940),
        rng.integers(2000, 20000, 50),
        rng.integers(50_000, 100_000, 9),
        [100_000],
    ])
    with criterion(1, "streaming ingest + materialize matches brute force "
                      "bitwise on 1000 random streams"):
        for i, n in enumerate(sizes):
            stream = random_stream(rng, DAVIS, int(n),
                                   duration_us=int(rng.integers(1, 2_000_000)))
            k = int(rng.integers(1, 7))
            state = rep.ToreState(geometry=DAVIS, k=k, tau_us=TAU)
            for e in stream:
                state.ingest(e)
            t_query = (int(stream.t[-1]) if len(stream) else 0) \
                + int(rng.integers(0, 1_000_000))
            got = state.materialize(t_query).data
            expected = tore_brute_force(stream, k, TAU, t_query)
            assert np.array_equal(got, expected), f"stream {i} diverged"
        elapsed = time.perf_counter() - start
        assert elapsed <= 120.0, f"took {elapsed:.1f}s, budget is 120s"


def test_02_tore_boundary_constants():
    with criterion(2, "decay transform boundary values exact"):
        assert rep.decay_value(1, TAU) == 1.0
        assert rep.decay_value(TAU, TAU) == 0.0
        assert abs(rep.decay_value(TAU ** 0.3, TAU) - 1.0) <= 1e-6
        # the saturation exponent for tau = 5s is the quoted 4.63
        assert abs(0.3 * math.log(TAU) - 4.63) < 5e-3
        state = rep.ToreState(geometry=ev.SensorGeometry(2, 2), k=1, tau_us=TAU)
        state.ingest(ev.Event(t=0, x=0, y=0, polarity=1))
        assert state.materialize(1).data[0, 0, 0] == 1.0
        assert state.materialize(TAU).data[0, 0, 0] == 0.0


def test_03_simulator_conservation():
    geometry = ev.SensorGeometry(8, 6)
    eps = 0.02
    with criterion(3, "ramp event counts exact and timestamps within one "
                      "inter-frame interval"):
        for crossings, fps, n_frames, sign in ((10, 25.0, 26, +1), (7, 40.0, 17, +1),
                                               (12, 20.0, 21, -1), (3, 100.0, 11, -1)):
            l_start = math.log((0.1 if sign > 0 else 0.9) + eps)
            l_end = math.log((0.9 if sign > 0 else 0.1) + eps)
            theta = abs(l_end - l_start) / (crossings + 1e-4)
            levels = np.linspace(l_start, l_end, n_frames)
            pixel = np.exp(levels) - eps
            frames = np.tile(pixel[:, None, None],
                             (1, geometry.height, geometry.width))
            f = sim.FrameSequence(geometry=geometry, fps=fps, frames=frames)
            params = sim.PixelModelParams(theta_pos=theta, theta_neg=theta, eps=eps)
            stream = sim.frames_to_events(f, params)

            total_dl = abs(l_end - l_start)
            expected_per_pixel = math.floor(total_dl / theta)
            assert expected_per_pixel == crossings
            assert len(stream) == crossings * geometry.num_pixels
            assert np.all(stream.p == sign)

            duration_us = (n_frames - 1) / fps * 1e6
            frame_us = duration_us / (n_frames - 1)
            slope = total_dl / duration_us
            ts = np.sort(stream.t[(stream.x == 0) & (stream.y == 0)]).astype(float)
            analytic = np.arange(1, crossings + 1) * theta / slope
            assert np.all(np.abs(ts - analytic) <= frame_us + 1.0)


def test_04_noise_monotonicity():
    geometry = ev.SensorGeometry(16, 16)
    fps = 5.0
    n_frames = 301  # 60 seconds
    shot = 10.0
    duration_s = (n_frames - 1) / fps
    with criterion(4, "dark/bright noise rates differ by the configured "
                      "factor within 3-sigma Poisson bands"):
        counts = {}
        for intensity in (0.1, 0.9):
            frames = np.full((n_frames, geometry.height, geometry.width), intensity)
            f = sim.FrameSequence(geometry=geometry, fps=fps, frames=frames)
            params = sim.PixelModelParams(shot_noise_scale=shot, seed=404)
            counts[intensity] = len(sim.frames_to_events(f, params))
        pixels = geometry.num_pixels
        mu_dark = shot * (1.0 - 0.1) * duration_s * pixels
        mu_bright = shot * (1.0 - 0.9) * duration_s * pixels
        assert abs(counts[0.1] - mu_dark) <= 3.0 * math.sqrt(mu_dark)
        assert abs(counts[0.9] - mu_bright) <= 3.0 * math.sqrt(mu_bright)
        # configured factor (1-0.1)/(1-0.9) = 9, within the propagated bands
        ratio = counts[0.1] / counts[0.9]
        lo = (mu_dark - 3 * math.sqrt(mu_dark)) / (mu_bright + 3 * math.sqrt(mu_bright))
        hi = (mu_dark + 3 * math.sqrt(mu_dark)) / (mu_bright - 3 * math.sqrt(mu_bright))
        assert lo <= ratio <= hi
        assert lo <= 9.0 <= hi


def test_05_format_round_trip():
    rng = np.random.default_rng(505)
    with criterion(5, "1000 random EVT1 files round-trip bit-exactly"):
        for i in range(1000):
            width = int(rng.integers(1, 500))
            height = int(rng.integers(1, 400))
            geometry = ev.SensorGeometry(width, height)
            n = int(rng.integers(0, 300))
            stream = random_stream(rng, geometry, n,
                                   duration_us=int(rng.integers(1, 10_000_000)))
            blob = ev.serialize_stream(stream)
            assert ev.serialize_stream(ev.parse_stream(blob)) == blob


def test_06_metric_exactness():
    with criterion(6, "MPJPE/PCK/AUC exact on the pinned cases"):
        gt = np.zeros((13, 3))
        pred = gt.copy()
        pred[0] = [3.0, 4.0, 0.0]
        assert met.mpjpe(pred, gt) == 5.0 / 13.0

        under = gt + [100.0, 0.0, 0.0]
        over = gt + [200.0, 0.0, 0.0]
        assert met.pck(under, gt, 150.0) == 1.0
        assert met.pck(over, gt, 150.0) == 0.0

        thresholds = met.auc_thresholds()
        assert len(thresholds) == 30
        assert thresholds[0] == 0.0 and thresholds[-1] == 500.0
        assert met.auc(gt, gt) == 29.0 / 30.0


def test_07_gradient_checks():
    rng = np.random.default_rng(707)
    n_points = 100
    tol = 1e-4
    with criterion(7, "analytic gradients of soft-argmax, JSD, BCE and MSE "
                      "within 1e-4 of central differences on 100 points each"):
        w = np.array([0.8, -1.3])

        def sa_value(g):
            return float(w @ pm.soft_argmax(g))

        def sa_grad(g):
            _, jac = pm.soft_argmax_grad(g)
            return w[0] * jac[0] + w[1] * jac[1]

        worst = 0.0
        for _ in range(n_points):
            point = rng.uniform(0.05, 1.0, (6, 6))
            worst = max(worst, pm.gradient_check(sa_value, sa_grad, point, 1e-5))
        assert worst <= tol, f"soft-argmax worst deviation {worst:.2e}"

        def interior(shape):
            raw = rng.dirichlet(np.ones(int(np.prod(shape))))
            return ((0.9 * raw + 0.1 / raw.size).reshape(shape))

        worst = 0.0
        for _ in range(n_points):
            p, q = interior((12,)), interior((12,))
            worst = max(worst,
                        pm.gradient_check(lambda a: pm.jsd(a, q),
                                          lambda a: pm.jsd_grad(a, q)[0], p, 1e-5),
                        pm.gradient_check(lambda b: pm.jsd(p, b),
                                          lambda b: pm.jsd_grad(p, b)[1], q, 1e-5))
        assert worst <= tol, f"JSD worst deviation {worst:.2e}"

        worst = 0.0
        for _ in range(n_points):
            y = (rng.random(16) > 0.5).astype(np.float64)
            p0 = rng.uniform(0.05, 0.95, 16)
            worst = max(worst, pm.gradient_check(lambda p: pm.bce(y, p),
                                                 lambda p: pm.bce_grad(y, p),
                                                 p0, 1e-5))
        assert worst <= tol, f"BCE worst deviation {worst:.2e}"

        worst = 0.0
        for _ in range(n_points):
            target = rng.normal(size=16)
            p0 = rng.normal(size=16)
            worst = max(worst, pm.gradient_check(lambda p: pm.mse(p, target),
                                                 lambda p: pm.mse_grad(p, target),
                                                 p0, 1e-5))
        assert worst <= tol, f"MSE worst deviation {worst:.2e}"


def test_08_scheduler_extremes_and_monotonicity():
    rng = np.random.default_rng(808)
    geometry = ev.SensorGeometry(4, 4)
    with criterion(8, "backend calls: ceil(F/N) at beta=0, F at score-starved "
                      "beta=1, non-decreasing in beta on 100 score sequences"):
        for frames_count, horizon in ((12, 4), (30, 5), (7, 3), (9, 1)):
            frames = tiny_volumes(frames_count, geometry)
            scores = np.concatenate(([1.0], rng.uniform(0.0, 0.999, horizon - 1))) \
                if horizon > 1 else np.array([1.0])
            backend = ScriptedBackend(scores, geometry)
            low = gating.schedule_masks(frames, backend, beta=0.0)
            assert low.backend_calls == math.ceil(frames_count / horizon)
            starved = ScriptedBackend(np.full(horizon, 0.9999), geometry)
            high = gating.schedule_masks(frames, starved, beta=1.0)
            assert high.backend_calls == frames_count

        betas = np.linspace(0.0, 1.0, 11)
        for seq in range(100):
            horizon = int(rng.integers(1, 7))
            frames_count = int(rng.integers(1, 50))
            scores = rng.uniform(0.0, 1.0, horizon)
            frames = tiny_volumes(frames_count, geometry)
            backend = ScriptedBackend(scores, geometry)
            calls = [gating.schedule_masks(frames, backend, beta=float(b)).backend_calls
                     for b in betas]
            assert calls == sorted(calls), f"sequence {seq} not monotone: {calls}"


def test_09_occlusion_protocol():
    with criterion(9, "occlusion rectangles bounded by 80x80 and empirical "
                      "frequency inside the 3-sigma binomial band"):
        vol = rep.ToreVolume(
            geometry=DAVIS,
            data=np.full((1, DAVIS.height, DAVIS.width), 0.5, dtype=np.float32))
        # parameter replay over 10k seeds: the documented draw order
        for prob in (0.8, 1.0):
            hits = 0
            n_draws = 10_000
            for seed in range(n_draws):
                gen = np.random.default_rng(seed)
                if gen.random() >= prob:
                    continue
                hits += 1
                h = int(gen.integers(1, 81))
                w = int(gen.integers(1, 81))
                top = int(gen.integers(0, DAVIS.height - h + 1))
                left = int(gen.integers(0, DAVIS.width - w + 1))
                assert 1 <= h <= 80 and 1 <= w <= 80
                assert 0 <= top <= DAVIS.height - h
                assert 0 <= left <= DAVIS.width - w
            sigma = math.sqrt(prob * (1 - prob) / n_draws)
            assert abs(hits / n_draws - prob) <= max(3 * sigma, 1e-12)

        # the real operation agrees with the replayed parameters
        for seed in range(300):
            out = met.occlude(vol, prob=0.8, rng=np.random.default_rng(seed))
            gen = np.random.default_rng(seed)
            if gen.random() >= 0.8:
                assert np.array_equal(out.data, vol.data)
                continue
            h = int(gen.integers(1, 81))
            w = int(gen.integers(1, 81))
            top = int(gen.integers(0, DAVIS.height - h + 1))
            left = int(gen.integers(0, DAVIS.width - w + 1))
            expected = vol.data.copy()
            expected[:, top : top + h, left : left + w] = 0.0
            assert np.array_equal(out.data, expected)


def test_10_normalization_round_trip():
    rng = np.random.default_rng(1010)
    with criterion(10, "denormalize(normalize) identity within 1e-9 on 1000 "
                       "random skeletons, head depth exactly 0"):
        for _ in range(1000):
            cam = random_camera(rng)
            joints_cam = np.column_stack([
                rng.uniform(-400.0, 400.0, 13),
                rng.uniform(-400.0, 400.0, 13),
                rng.uniform(600.0, 4000.0, 13),
            ])
            s = sim.SkeletonFrame(t_us=0, joints=joints_cam, frame="camera")
            norm = sim.normalize_labels(s, cam)
            assert norm[s.head_index(), 2] == 0.0
            depth = sim.head_depth_mm(s, cam)
            back = pm.denormalize(norm, cam, depth)
            assert np.allclose(back.joints, joints_cam, rtol=1e-9, atol=1e-9)


def test_11_representation_rate_flexibility():
    rng = np.random.default_rng(1111)
    with criterion(11, "windows at 20-150 FPS keep range/support invariants "
                       "and conserve event counts"):
        stream = random_stream(rng, DAVIS, 30_000, duration_us=1_000_000)
        for fps in (20, 30, 50, 75, 100, 150):
            window_us = round(1e6 / fps)
            windows = ev.slice_constant_time(stream, window_us, 0)
            assert sum(len(w) for w in windows) == len(stream)
            state = rep.ToreState(geometry=DAVIS, k=4, tau_us=TAU)
            touched = np.zeros((2, DAVIS.height, DAVIS.width), dtype=bool)
            for i, w in enumerate(windows):
                state.ingest_stream(w)
                pol = (w.p < 0).astype(np.int64)
                touched[pol, w.y.astype(np.int64), w.x.astype(np.int64)] = True
                vol = state.materialize((i + 1) * window_us).data
                assert vol.min() >= 0.0 and vol.max() <= 1.0
                support = vol.reshape(2, 4, DAVIS.height, DAVIS.width).any(axis=1)
                # tau is 5s and the stream spans 1s, so nothing has aged out:
                # support must equal the touched pixel set exactly
                assert np.array_equal(support, touched)


def test_12_throughput_benchmark():
    with criterion(12, "single-threaded parse + ingest at or above 1M events/s "
                       "with a self-consistent report"):
        config = {"n_events": 2_000_000, "duration_us": 1_000_000, "seed": 3,
                  "k": 4, "tau_us": TAU, "window_us": 20_000,
                  "width": 346, "height": 260}
        report = cli.run_bench(config)
        assert report["events"] == 2_000_000
        assert math.isclose(report["parse_events_per_s"],
                            report["events"] / report["parse_s"], rel_tol=1e-9)
        assert math.isclose(report["ingest_events_per_s"],
                            report["events"] / report["ingest_s"], rel_tol=1e-9)
        assert math.isclose(report["combined_events_per_s"],
                            report["events"] / (report["parse_s"] + report["ingest_s"]),
                            rel_tol=1e-9)
        assert report["combined_events_per_s"] >= 1_000_000, (
            f"combined rate {report['combined_events_per_s']:,.0f} ev/s")
