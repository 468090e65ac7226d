"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line with the measured values; the
lines are repeated in the pytest terminal summary. Run standalone with
``python3 tests/test_acceptance.py``.
"""
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from oracles import central_difference, least_squares_optimum

from csfusion.aperture import design_dual_apertures
from csfusion.classifier import backprop, cross_entropy, init_network
from csfusion.config import default_config, with_overrides
from csfusion.datamodel import SpectralCube, cube_as_vector
from csfusion.operators import DifferenceOperator, WaveletOperator, build_projection
from csfusion.pipeline import evaluate_pipeline, run_pipeline
from csfusion.sensing import acquire_chsi, acquire_cmsi, fused_features_reference, simulate
from csfusion.solver import FusionConfig, FusionState, fuse, smooth_surrogate, surrogate_gradient

SEEDS = range(5)


def record(number, title, ok, detail):
    from conftest import ACCEPTANCE_LINES

    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _rel_gap(A_apply, A_adjoint, n_in, n_out, rng):
    x = rng.standard_normal(n_in)
    v = rng.standard_normal(n_out)
    lhs = float(A_apply(x) @ v)
    rhs = float(x @ A_adjoint(v))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def test_1_forward_model_matrix_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d = design_dual_apertures(16, 16, 8, 2, 2, seed)
        assert d.K == 4
        H_ms, H_hs, _ = build_projection(d)
        F = SpectralCube(rng.random((16, 16, 8)))
        x = cube_as_vector(fused_features_reference(F, d.hs_bank))
        ms = cube_as_vector(acquire_cmsi(F, d.ms_bank, d.ms_patterns))
        hs = cube_as_vector(acquire_chsi(F, d.hs_bank, d.hs_patterns, 2))
        worst = max(worst,
                    np.max(np.abs(ms - H_ms.apply(x))) / np.max(np.abs(ms)),
                    np.max(np.abs(hs - H_hs.apply(x))) / np.max(np.abs(hs)))
    elapsed = time.perf_counter() - t0
    record(1, "forward model equals sparse product", worst <= 1e-10 and elapsed < 5,
           f"max rel err {worst:.2e} (<= 1e-10) on 10 scenes, {elapsed:.2f} s (< 5 s)")


def test_2_structural_invariants():
    failures = []
    for q, p in [(1, 1), (2, 2), (4, 2), (2, 4)]:
        d = design_dual_apertures(16, 16, 16, q, p, seed=q * 10 + p)
        H_ms, H_hs, _ = build_projection(d)
        n = 16 * 16 * d.hs_bank.count
        ms, hs = H_ms.matrix, H_hs.matrix
        checks = {
            "ms row counts": np.all(np.diff(ms.indptr) == q),
            "ms unit entries": np.all(ms.data == 1.0),
            "hs row counts": np.all(np.diff(hs.indptr) == p * p),
            "hs entries 1/p^2": np.all(hs.data == 1.0 / p**2),
            "hs row sums": np.all(np.asarray(hs.sum(axis=1)).ravel() == 1.0),
            "ms rate": H_ms.rows / n == 1 / q and H_ms.cols == n,
            "hs rate": H_hs.rows / n == 1 / p**2 and H_hs.cols == n,
        }
        failures += [f"{k} (q={q}, p={p})" for k, ok in checks.items() if not ok]
    record(2, "projection structure and measurement rates", not failures,
           "exact on q,p in {(1,1),(2,2),(4,2),(2,4)}" if not failures else "; ".join(failures))


def test_3_adjoint_identities():
    rng = np.random.default_rng(3)
    d = design_dual_apertures(16, 16, 8, 2, 2, seed=3)
    H_ms, H_hs, H = build_projection(d)
    K = d.hs_bank.count
    Phi = DifferenceOperator(16, 16, K)
    Psi = WaveletOperator(16, 16, K, 2)
    ops = {
        "H_ms": (H_ms.apply, H_ms.adjoint, H_ms.cols, H_ms.rows),
        "H_hs": (H_hs.apply, H_hs.adjoint, H_hs.cols, H_hs.rows),
        "H": (H.apply, H.adjoint, H.cols, H.rows),
        "Phi": (Phi.apply, Phi.adjoint, Phi.shape[1], Phi.shape[0]),
        "Psi^T": (Psi.apply, Psi.adjoint, Psi.shape[1], Psi.shape[0]),
    }
    worst = {name: max(_rel_gap(*op, rng) for _ in range(20)) for name, op in ops.items()}
    ok = max(worst.values()) <= 1e-10
    record(3, "adjoint identities", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<= 1e-10, 20 pairs each)")


def test_4_wavelet_orthonormality():
    rng = np.random.default_rng(4)
    Psi = WaveletOperator(16, 16, 4, 2)
    rt = pars = 0.0
    for _ in range(100):
        x = rng.standard_normal(Psi.shape[1])
        c = Psi.apply(x)
        rt = max(rt, float(np.max(np.abs(Psi.adjoint(c) - x))))
        pars = max(pars, abs(float(np.linalg.norm(c) - np.linalg.norm(x))) / float(np.linalg.norm(x)))
    record(4, "wavelet orthonormality", rt <= 1e-12 and pars <= 1e-12,
           f"round trip {rt:.1e}, Parseval {pars:.1e} (<= 1e-12, 100 vectors)")


def test_5_solver_matches_least_squares_oracle():
    t0 = time.perf_counter()
    gaps = []
    for (q, p), seed in [((2, 2), 0), ((2, 2), 1), ((1, 2), 2), ((2, 1), 3)]:
        d = design_dual_apertures(8, 8, 8, q, p, seed)
        _, _, H = build_projection(d)
        K = d.hs_bank.count
        F = SpectralCube(np.random.default_rng(seed).random((8, 8, 8)))
        y = simulate(F, d, "gaussian", 20.0, seed).stacked()
        fstar, _ = least_squares_optimum(H.matrix.toarray(), y)
        assert fstar > 1e-6 * float(y @ y)  # noisy data is inconsistent, so the ratio is well defined
        cfg = FusionConfig(lambda1=0.0, lambda2=0.0, rel_tol=1e-10, max_iters=2000)
        _, rep = fuse(y, H, WaveletOperator(8, 8, K, 2), DifferenceOperator(8, 8, K), cfg)
        gaps.append((rep.final_objective - fstar) / fstar)
    elapsed = time.perf_counter() - t0
    ok = max(gaps) <= 1e-3 and elapsed < 30
    record(5, "solver vs dense least squares", ok,
           f"max relative excess {max(gaps):.1e} (<= 1e-3) on 4 instances of 8x8x4, {elapsed:.1f} s (< 30 s)")


def test_6_gradient_checks():
    rng = np.random.default_rng(6)
    d = design_dual_apertures(4, 4, 8, 2, 2, seed=6)
    _, _, H = build_projection(d)
    K = d.hs_bank.count
    Psi, Phi = WaveletOperator(4, 4, K, 1), DifferenceOperator(4, 4, K)
    y = rng.standard_normal(H.rows)
    st = FusionState.zeros(H.cols, Psi.shape[0], Phi.shape[0])
    st.gamma1, st.delta1 = rng.standard_normal(Psi.shape[0]), rng.standard_normal(Psi.shape[0])
    st.gamma2, st.delta2 = rng.standard_normal(Phi.shape[0]), rng.standard_normal(Phi.shape[0])
    x = rng.standard_normal(H.cols)
    g = surrogate_gradient(x, y, H, Psi, Phi, st, 0.7)
    fd = central_difference(lambda v: smooth_surrogate(v, y, H, Psi, Phi, st, 0.7), x)
    surrogate_err = float(np.linalg.norm(g - fd) / np.linalg.norm(fd))

    net = init_network(3, (4, 4), 2, seed=6)
    net = replace(net, biases=tuple(0.1 * rng.standard_normal(b.shape) for b in net.biases))
    S = rng.standard_normal((3, 3))
    labels = np.array([0, 1, 1])
    _, grads = backprop(net, S, labels)
    bp_err = 0.0
    for li in range(len(net.weights)):
        for kind in (0, 1):
            def loss_of(p, li=li, kind=kind):
                ws, bs = list(net.weights), list(net.biases)
                (ws if kind == 0 else bs)[li] = p
                return cross_entropy(replace(net, weights=tuple(ws), biases=tuple(bs)), S, labels)

            base = (net.weights if kind == 0 else net.biases)[li]
            num = central_difference(loss_of, base)
            err = np.max(np.abs(grads[li][kind] - num)) / max(np.max(np.abs(num)), 1e-8)
            bp_err = max(bp_err, float(err))
    record(6, "gradient checks", surrogate_err <= 1e-5 and bp_err <= 1e-4,
           f"surrogate {surrogate_err:.1e} (<= 1e-5), backprop {bp_err:.1e} (<= 1e-4)")


def _mean_oa(*overrides):
    base = with_overrides(default_config(), *overrides)
    return float(np.mean([evaluate_pipeline(with_overrides(base, {"seed": s}))["overall_accuracy"] for s in SEEDS]))


def test_7_desk_scale_classification(tmp_path):
    t0 = time.perf_counter()
    oas = []
    for s in SEEDS:
        cfg = with_overrides(default_config(), {"seed": s, "output": str(tmp_path / f"seed{s}")})
        oas.append(run_pipeline(cfg)["summary"]["overall_accuracy"])
    elapsed = time.perf_counter() - t0
    mean = float(np.mean(oas))
    record(7, "desk-scale end-to-end OA", mean >= 0.90 and elapsed < 300,
           f"mean OA {mean:.4f} (>= 0.90) over 5 seeds "
           f"[{', '.join(f'{v:.3f}' for v in oas)}], {elapsed:.0f} s (< 300 s)")


def test_8_noise_trend():
    lo = _mean_oa("noise.kind=gaussian", "noise.snr_db=10")
    hi = _mean_oa("noise.kind=gaussian", "noise.snr_db=20")
    record(8, "OA does not drop as SNR rises", hi >= lo, f"mean OA 20 dB {hi:.4f} >= 10 dB {lo:.4f} (5 seeds)")


def test_9_tv_regularization_effect():
    off = _mean_oa("noise.kind=gaussian", "noise.snr_db=15", "fusion.lambda2=0")
    on = _mean_oa("noise.kind=gaussian", "noise.snr_db=15", "fusion.lambda2=5e-4")
    record(9, "TV regularization helps under noise", on >= off,
           f"mean OA lambda2=5e-4 {on:.4f} >= lambda2=0 {off:.4f} at 15 dB (5 seeds)")


def test_10_real_scene_reproduction():
    from conftest import ACCEPTANCE_LINES

    line = "SKIP  criterion 10  real-scene reproduction: optional, needs a user-supplied scene (see README)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    pytest.skip("optional: requires an external scene cube and ground truth")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider", *sys.argv[1:]]))
