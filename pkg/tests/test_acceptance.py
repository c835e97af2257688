"""Acceptance gate: ten desk-scale criteria at their stated tolerances.

Each test reports a one-line verdict (collected and reprinted at the end of
the run by ``conftest.py``) before asserting, so a failing criterion still
shows its measured numbers.
"""

import json
import time

import numpy as np
import pytest

from conftest import record_verdict
from fourierpet import spectral
from fourierpet.analysis import deviation_profile, psnr, reconstruct_pair, swap_study
from fourierpet.classical import mlem, osem
from fourierpet.cli import main
from fourierpet.net import (
    ReconConfig,
    TrainConfig,
    fourierpet_forward,
    initial_estimate,
    normalize_truth,
    train,
)
from fourierpet.projector import backproject, build_parallel_projector, forward
from fourierpet.simulator import PHANTOM_KINDS, DegradationConfig, apply_ac_bias, make_phantom, simulate_pair
from oracles import finite_difference_check, poisson_loglik
from test_autodiff import LINEAR_CASES, OP_CASES, _transpose_gap

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def A32():
    return build_parallel_projector((32, 32))


# ---------------------------------------------------------------- 1
def test_criterion_1_projector_adjoint():
    t0 = time.perf_counter()
    A = build_parallel_projector((32, 32), 48, 46)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        x = rng.standard_normal((32, 32))
        y = rng.standard_normal(A.sino_shape)
        Ax = forward(A, x)
        gap = abs(np.vdot(Ax, y) - np.vdot(x, backproject(A, y))) / (np.linalg.norm(Ax) * np.linalg.norm(y))
        worst = max(worst, gap)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 10
    record_verdict(1, "", ok, f"max relative gap {worst:.2e} over 50 pairs, {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------- 2
def test_criterion_2_transform_roundtrips():
    rng = np.random.default_rng(2)
    fft_err = dwt_err = pars_err = 0.0
    for i in range(100):
        h, w = 2 * rng.integers(2, 17, size=2)
        x = rng.standard_normal((h, w)) * 10 ** rng.uniform(-2, 2)
        fft_err = max(fft_err, np.abs(spectral.ifft2(spectral.fft2(x)).real - x).max())
        dwt_err = max(dwt_err, np.abs(spectral.idwt2_haar(spectral.dwt2_haar(x)) - x).max())
        amp, _ = spectral.amp_phase(spectral.fft2(x))
        e = np.sum(x**2)
        pars_err = max(pars_err, abs(e - np.sum(amp**2) / x.size) / e)
    ok = fft_err < 1e-10 and dwt_err < 1e-10 and pars_err < 1e-9
    record_verdict(2, "", ok, f"fft {fft_err:.1e}, dwt {dwt_err:.1e}, Parseval {pars_err:.1e} over 100 grids")
    assert ok


# ---------------------------------------------------------------- 3
def test_criterion_3_mlem_monotone(A32):
    dense = A32.matrix.toarray()
    worst_drop, worst_osem = np.inf, 0.0
    for seed in range(5):
        ph = make_phantom(PHANTOM_KINDS[seed % 3], (32, 32), seed)
        y = simulate_pair(A32, ph, DegradationConfig(seed=seed), bias=False).y_low
        vals = []
        x_ml = mlem(A32, y, 50, callback=lambda k, x: vals.append(poisson_loglik(dense, y.ravel(), x.ravel())))
        vals = np.array(vals)
        rel = np.diff(vals) / np.abs(vals[1:])
        worst_drop = min(worst_drop, rel.min())
        worst_osem = max(worst_osem, np.abs(osem(A32, y, 50, 1) - x_ml).max())
    ok = worst_drop >= -1e-9 and worst_osem < 1e-12
    record_verdict(3, "", ok, f"smallest relative log-likelihood step {worst_drop:.1e}, "
                              f"OSEM(1 subset) vs MLEM {worst_osem:.1e}")
    assert ok


# ---------------------------------------------------------------- 4
def test_criterion_4_autodiff_gate():
    fd = {name: finite_difference_check(fn, arrays) for name, fn, arrays in OP_CASES}
    tr = {name: _transpose_gap(fn, shape) for name, fn, shape in LINEAR_CASES}
    worst_fd = max(fd, key=fd.get)
    worst_tr = max(tr, key=tr.get)
    ok = fd[worst_fd] < 1e-4 and tr[worst_tr] < 1e-9
    record_verdict(4, "", ok, f"{len(fd)} ops, worst FD {fd[worst_fd]:.1e} ({worst_fd}); "
                              f"{len(tr)} linear ops, worst transpose gap {tr[worst_tr]:.1e} ({worst_tr})")
    assert ok


# ---------------------------------------------------------------- 5
def test_criterion_5_identity_at_init(A32):
    ph = make_phantom("ellipse_brain", (32, 32), 0)
    y = simulate_pair(A32, ph, DegradationConfig(seed=0)).y_low
    x0 = initial_estimate(A32, y)[0, 0]
    worst = 0.0
    for K in (1, 2, 3):
        for N in (1, 2):
            out, _ = fourierpet_forward(y, A32, ReconConfig(K=K, N=N, seed=K * 7 + N))
            worst = max(worst, np.abs(out - x0).max())
    ok = worst < 1e-8
    record_verdict(5, "", ok, f"max |net(y) - normalize(A^T y)| = {worst:.1e} over K in 1..3, N in 1..2")
    assert ok


# ---------------------------------------------------------------- 6
def test_criterion_6_swap_study(A32):
    t0 = time.perf_counter()
    wins_phase = wins_amp = 0
    for i in range(20):
        ph = make_phantom(PHANTOM_KINDS[i % 3], (32, 32), 100 + i)
        pair = simulate_pair(A32, ph, DegradationConfig(dose_fraction=0.1, ac_bias_strength=0.3, seed=1000 + i))
        low, full = reconstruct_pair(A32, pair)
        p = swap_study(ph.activity, low, full).column("psnr")
        wins_phase += p[1] > p[0]
        wins_amp += p[2] > p[0]
    elapsed = time.perf_counter() - t0
    ok = wins_phase >= 18 and wins_amp >= 18 and elapsed < 120
    record_verdict(6, "", ok, f"A_low+Phi_full beats low on {wins_phase}/20, A_full+Phi_low on {wins_amp}/20, "
                              f"{elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 7
def test_criterion_7a_noise_concentrates_in_hh_phase(A32):
    wins = 0
    for i in range(20):
        ph = make_phantom(PHANTOM_KINDS[i % 3], (32, 32), 100 + i)
        pair = simulate_pair(A32, ph, DegradationConfig(dose_fraction=0.01, ac_bias_strength=0.0, seed=2000 + i),
                             bias=False)
        low, full = reconstruct_pair(A32, pair)
        prof = deviation_profile(low, full)
        wins += prof.bands["HH"]["phase_var"] > prof.bands["LL"]["phase_var"]
    ok = wins >= 18
    record_verdict(7, "a", ok, f"noise-only: HH phase variance > LL on {wins}/20")
    assert ok


def test_criterion_7b_bias_concentrates_in_low_ring_amplitude():
    wins = 0
    for i in range(20):
        ph = make_phantom(PHANTOM_KINDS[i % 3], (32, 32), 100 + i)
        biased = apply_ac_bias(ph.activity, DegradationConfig(ac_bias_strength=0.3, seed=3000 + i))
        prof = deviation_profile(biased, ph.activity)
        wins += prof.amp_dev[0] > prof.amp_dev[-1]
    ok = wins >= 18
    record_verdict(7, "b", ok, f"bias-only: lowest-ring amplitude deviation > highest on {wins}/20")
    assert ok


# ---------------------------------------------------------------- 8 and 9 share one training run
def _pairs(A, seeds):
    return [simulate_pair(A, make_phantom(PHANTOM_KINDS[s % 3], (32, 32), s), DegradationConfig(seed=s))
            for s in seeds]


TRAIN_EPOCHS = 40


@pytest.fixture(scope="module")
def trained(A32):
    tr = _pairs(A32, range(64))
    te = _pairs(A32, range(1000, 1016))
    t0 = time.process_time()
    net, hist = train(A32, np.stack([p.y_low for p in tr]), np.stack([p.truth for p in tr]),
                      ReconConfig(K=3, N=1, channels=16), TrainConfig(epochs=TRAIN_EPOCHS, batch_size=4))
    cpu = time.process_time() - t0
    return net, hist, te, cpu


def test_criterion_8a_beats_osem(A32, trained):
    net, _, te, cpu = trained
    truth = normalize_truth(np.stack([p.truth for p in te]))
    out = net.predict(A32, np.stack([p.y_low for p in te]))
    net_psnr = np.mean([psnr(o, t) for o, t in zip(out, truth)])
    base = [osem(A32, p.y_low, 4, 8) / (p.cfg.dose_fraction * p.scale) / p.truth.max() for p in te]
    osem_psnr = np.mean([psnr(b, t) for b, t in zip(base, truth)])
    ok = net_psnr - osem_psnr >= 1.0 and cpu <= 30 * 60
    record_verdict(8, "a", ok, f"held-out PSNR {net_psnr:.2f} dB vs OSEM {osem_psnr:.2f} dB "
                               f"(+{net_psnr - osem_psnr:.2f}), training {cpu / 60:.1f} CPU-min")
    assert ok


def test_criterion_8b_single_pair_overfit(A32):
    pair = _pairs(A32, [3])[0]
    _, hist = train(A32, pair.y_low[None], pair.truth[None], ReconConfig(K=3, N=1, channels=16),
                    TrainConfig(epochs=1500, batch_size=1))
    before, after = hist.steps[0]["loss"], hist.steps[-1]["loss"]
    ok = before / after >= 10
    record_verdict(8, "b", ok, f"single-pair loss {before:.4f} -> {after:.5f} ({before / after:.1f}x "
                               f"over {len(hist.steps)} steps)")
    assert ok


def test_criterion_9a_residual_decreases(trained):
    _, hist, _, _ = trained
    res = hist.epoch_residuals()
    first, last = res[0], res[-1]
    ok = bool(np.all(last < first))
    record_verdict(9, "a", ok, "per-stage mean ||x - z||_2 epoch 1 "
                               f"{np.round(first, 4).tolist()} -> final {np.round(last, 4).tolist()}")
    assert ok


def test_criterion_9b_mu_stable(trained):
    _, hist, _, _ = trained
    mu = hist.mu_trajectory()
    tail = mu[int(0.9 * len(mu)):]
    spread = (tail.max(axis=0) - tail.min(axis=0)) / np.abs(tail[-1])
    ok = bool(np.all(spread < 0.05))
    record_verdict(9, "b", ok, f"mu variation over last 10% of {len(mu)} steps: "
                               f"{np.round(100 * spread, 3).tolist()} % of final values {np.round(tail[-1], 4).tolist()}")
    assert ok


# ---------------------------------------------------------------- 10
def test_criterion_10_ablation_harness(tmp_path, capsys):
    tr, te = tmp_path / "train", tmp_path / "test"
    assert main(["simulate", "--out", str(tr), "--n-pairs", "8", "--seed", "0"]) == 0
    assert main(["simulate", "--out", str(te), "--n-pairs", "4", "--seed", "500"]) == 0
    found = {}
    for sweep in ("apcm-mode", "loss"):
        out = tmp_path / sweep
        rc = main(["ablate", "--sweep", sweep, "--train-manifest", str(tr / "manifest.txt"), "--test-manifest",
                   str(te / "manifest.txt"), "--out", str(out), "--epochs", "2", "--set", "N=1"])
        assert rc == 0
        rows = [json.loads(x) for x in (out / f"ablation-{sweep}.jsonl").read_text().splitlines()]
        found[sweep] = rows
    capsys.readouterr()
    modes = [r["config"] for r in found["apcm-mode"][1:]]
    loss_rows = found["loss"][1:]
    finite = all(np.isfinite(r[m]) for rows in found.values() for r in rows for m in ("psnr", "ssim", "rmse"))
    ok = (modes == ["targeted", "full_band"] and len(loss_rows) == 4
          and loss_rows[-1]["loss_weights"] == [0.5, 0.3, 0.01] and finite)
    record_verdict(10, "", ok, f"apcm-mode rows {modes}, loss rows {[r['config'] for r in loss_rows]}, "
                               f"all metrics finite: {finite}")
    assert ok
