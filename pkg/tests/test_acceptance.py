"""Acceptance checks, one test per criterion.

Each test records a ``CRITERION <n> PASS|FAIL|SKIP`` line; the lines are
printed together in the pytest terminal summary (see conftest.py) and when
this file is run directly with ``python tests/test_acceptance.py``.
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from wmbench.attack.baselines import AttackSpec, apply_signal_attack, regen
from wmbench.attack.raven import RavenConfig, run_raven, warp_array
from wmbench.attack.transfer import match_luminance
from wmbench.cli.config import DEMO_CONFIG
from wmbench.cli.main import main as cli_main
from wmbench.core import ImageBuffer, derive_stream, gaussian_like, psnr
from wmbench.diffusion.attention import view_attention
from wmbench.diffusion.backend import BackendSpec, load_backend
from wmbench.diffusion.schedule import forward_noise, strength_to_timestep
from wmbench.evaluation.features import frechet_stats
from wmbench.evaluation.grid import load_report
from wmbench.evaluation.metrics import FrechetStats, calibrate_threshold, frechet_distance, tpr_at_fpr
from wmbench.toydata import toy_set
from wmbench.watermarks import embed, make_key, statistic

RESULTS = []  # (criterion, status, detail), read by conftest's terminal summary

N_DESK = 50
DESK_SIZE = 128
PRETRAINED_ENV = "WMBENCH_PRETRAINED_MODEL"


def record(n, ok, detail, seconds):
    status = "PASS" if ok else "FAIL"
    RESULTS.append((n, status, f"{detail} [{seconds:.1f}s]"))
    print(f"CRITERION {n} {status}: {detail} [{seconds:.1f}s]")
    assert ok, detail


@pytest.fixture(scope="module")
def desk_marked(backend):
    """50 toy images at 128px marked with both bitstream schemes."""
    data = toy_set(N_DESK, DESK_SIZE, seed=2024, prefix="acc")
    keys = {s: make_key(s, 77) for s in ("dwt_dct", "dwt_dct_svd")}
    marked = {s: [embed(x, k) for x in data] for s, k in keys.items()}
    return data, keys, marked


# ---------------------------------------------------------------------------

def test_criterion_1_formula_suite(backend):
    t0 = time.perf_counter()
    checks = {}
    sched = backend.schedule
    z = gaussian_like((4, 8, 8), derive_stream(1, "c1:z"))
    z_tau, tau = forward_noise(z, 0.15, sched, derive_stream(1, "c1:eps"))
    eps = derive_stream(1, "c1:eps").normal(z.shape)
    ab = sched.alpha_bar[tau]
    checks["forward_noise exact"] = np.array_equal(z_tau.values, np.sqrt(ab) * z.values + np.sqrt(1 - ab) * eps)
    checks["tau=7"] = tau == 7 and strength_to_timestep(0.15, 50) == 7

    a = derive_stream(2, "c1:w").normal((3, 9, 7))
    wrap_ok = all(np.array_equal(np.sort(warp_array(a, i, j, "wrap").ravel()), np.sort(a.ravel()))
                  and np.array_equal(warp_array(warp_array(a, i, j, "wrap"), -2, 5, "wrap"),
                                     warp_array(a, i - 2, j + 5, "wrap"))
                  for i in range(-4, 5) for j in range(-4, 5))
    ident = all(np.array_equal(warp_array(a, 0, 0, b), a) for b in ("edge_replicate", "reflect", "wrap"))
    checks["warp invariants"] = wrap_ok and ident

    r = derive_stream(3, "c1:att")
    qf, kf = r.normal((6, 5)), r.normal((6, 5))
    wq, wk, wv = r.normal((5, 4)), r.normal((5, 4)), r.normal((5, 3))
    q, k, v = qf @ wq, kf @ wk, kf @ wv
    oracle = np.zeros((6, 3))
    for i in range(6):
        logits = np.array([float(np.dot(q[i], k[j])) / 2.0 for j in range(6)])
        w = np.exp(logits - logits.max())
        oracle[i] = (w / w.sum()) @ v
    same = view_attention(kf, kf, wq, wk, wv)
    q2 = kf @ wq
    self_oracle = np.zeros((6, 3))
    for i in range(6):
        logits = np.array([float(np.dot(q2[i], k[j])) / 2.0 for j in range(6)])
        w = np.exp(logits - logits.max())
        self_oracle[i] = (w / w.sum()) @ v
    checks["view_attention oracle"] = np.max(np.abs(view_attention(qf, kf, wq, wk, wv) - oracle)) <= 1e-6
    checks["self-attention reduction"] = np.max(np.abs(same - self_oracle)) <= 1e-6

    L_c, L_w = r.uniform(10, 90, 500), r.uniform(30, 70, 500)
    out = match_luminance(L_c, L_w)
    ref = (L_w.std() / L_c.std()) * (L_c - L_c.mean()) + L_w.mean()
    checks["contrast formula"] = np.max(np.abs(out - ref)) <= 1e-6
    checks["contrast statistics"] = abs(out.mean() - L_w.mean()) <= 1e-6 and abs(out.std() - L_w.std()) <= 1e-6

    s = r.normal((6, 6))
    st = FrechetStats(r.normal(6), s @ s.T, 10)
    dmu = r.normal(6)
    checks["frechet self"] = frechet_distance(st, st) <= 1e-6
    checks["frechet mean shift"] = abs(frechet_distance(FrechetStats(np.zeros(6), np.eye(6), 7),
                                                        FrechetStats(dmu, np.eye(6), 7)) - dmu @ dmu) <= 1e-6
    secs = time.perf_counter() - t0
    bad = [k for k, v in checks.items() if not v]
    record(1, not bad and secs < 60, f"{len(checks) - len(bad)}/{len(checks)} formula checks" +
           (f", failed: {bad}" if bad else ""), secs)


def test_criterion_2_calibration_oracle():
    t0 = time.perf_counter()
    r = derive_stream(0, "c2")
    phi = calibrate_threshold(r.normal(100_000), 0.01)
    tpr = tpr_at_fpr(r.normal(100_000), phi)
    secs = time.perf_counter() - t0
    record(2, abs(phi - 2.326) <= 0.03 and abs(tpr - 0.01) <= 0.005 and secs < 60,
           f"phi={phi:.4f} (target 2.326 +/- 0.03), null TPR={tpr:.4f} (target 0.01 +/- 0.005)", secs)


def test_criterion_3_watermark_round_trips():
    t0 = time.perf_counter()
    data = toy_set(20, 128, seed=3, prefix="c3")
    parts, ok = [], True
    for scheme in ("dwt_dct", "dwt_dct_svd"):
        key = make_key(scheme, 3)
        marked = [embed(x, key) for x in data]
        acc = min(statistic(ImageBuffer(m.to_uint8() / 255.0), key)[0] for m in marked)
        p = min(psnr(x, m) for x, m in zip(data, marked))
        null = np.mean([statistic(ImageBuffer(derive_stream(i, "c3:null").uniform(size=(128, 128, 3))),
                                  make_key(scheme, 50_000 + i))[0] for i in range(200)])
        ok &= acc >= 0.99 and p >= 38 and abs(null - 0.5) <= 0.05
        parts.append(f"{scheme}: min clean acc {acc:.3f}, min PSNR {p:.1f} dB, null acc {null:.3f}")
    secs = time.perf_counter() - t0
    record(3, ok and secs < 300, "; ".join(parts), secs)


def test_criterion_4_tiny_pipeline(backend):
    t0 = time.perf_counter()
    data = toy_set(3, DESK_SIZE, seed=4, prefix="c4")
    from wmbench.attack.transfer import color_transfer, contrast_transfer

    degen = 0.0
    for x in data:
        out, _ = run_raven(x, RavenConfig(strength=0.0, fixed_delta_px=(0, 0)), backend)
        ref = contrast_transfer(color_transfer(backend.decode(backend.encode(x)), x), x)
        degen = max(degen, float(np.max(np.abs(out.values - ref.values))))
    a, _ = run_raven(data[0], RavenConfig(seed=9), backend)
    b, _ = run_raven(data[0], RavenConfig(seed=9), backend)
    determ = np.array_equal(a.values, b.values)
    rel = 0.0
    cond = backend.null_conditioning()
    for x in data[:2]:
        z = backend.encode(x)
        z2 = backend.sample(backend.invert(z, 50, conditioning=cond), 50, conditioning=cond)
        rel = max(rel, float(np.linalg.norm(z2.values - z.values) / np.linalg.norm(z.values)))
    secs = time.perf_counter() - t0
    record(4, degen <= 2 / 255 and determ and rel <= 0.05 and secs < 600,
           f"degenerate max diff {degen * 255:.3f}/255 (<= 2/255), deterministic={determ}, "
           f"invert/sample rel L2 {rel:.4f} (<= 0.05)", secs)


def test_criterion_5_directional_removal(backend, desk_marked):
    t0 = time.perf_counter()
    data, keys, marked = desk_marked
    k1, k2 = keys["dwt_dct"], keys["dwt_dct_svd"]

    def acc(imgs, key):
        return float(np.mean([statistic(ImageBuffer(y.to_uint8() / 255.0), key)[0] for y in imgs]))

    raven = acc([run_raven(x, RavenConfig(strength=0.15, seed=5), backend)[0] for x in marked["dwt_dct"]], k1)
    rg = acc([regen(x, 0.15, backend, seed=5) for x in marked["dwt_dct"]], k1)
    bright = acc([apply_signal_attack(x, AttackSpec.default("brightness")) for x in marked["dwt_dct_svd"]], k2)
    blur = acc([apply_signal_attack(x, AttackSpec.default("gaussian_blur")) for x in marked["dwt_dct_svd"]], k2)
    secs = time.perf_counter() - t0
    record(5, raven <= 0.65 and rg <= 0.65 and bright < 0.7 and blur >= 0.9 and secs < 900,
           f"DwtDct acc after RAVEN {raven:.3f}, Regen {rg:.3f} (<= 0.65); DwtDctSvd acc after "
           f"brightness 0.5 {bright:.3f} (< 0.7), blur 1 {blur:.3f} (>= 0.9); n={len(data)}", secs)


def test_criterion_6_strength_monotonicity(backend, desk_marked):
    t0 = time.perf_counter()
    _, _, marked = desk_marked
    xs = marked["dwt_dct"]
    ref = frechet_stats(xs)
    fds = []
    for s in (0.10, 0.15, 0.25, 0.45):
        outs = [run_raven(x, RavenConfig(strength=s, seed=6), backend)[0] for x in xs]
        fds.append(frechet_distance(frechet_stats(outs), ref))
    drops = sum(b < a for a, b in zip(fds, fds[1:]))
    ok = drops == 0 or (drops == 1 and fds[-1] > fds[0])
    secs = time.perf_counter() - t0
    record(6, ok, "FD over s=0.10/0.15/0.25/0.45: " + ", ".join(f"{v:.5f}" for v in fds) +
           f" ({drops} adjacent decrease(s), one allowed)", secs)


def test_criterion_7_pretrained_scaled_check():
    source = os.environ.get(PRETRAINED_ENV)
    if not source:
        RESULTS.append((7, "SKIP", f"optional: set {PRETRAINED_ENV} to a diffusers SD 1.x/2.x checkpoint"))
        print(f"CRITERION 7 SKIP: no pretrained backend ({PRETRAINED_ENV} unset)")
        pytest.skip("pretrained backend not configured")
    t0 = time.perf_counter()
    b = load_backend(BackendSpec(name=f"diffusers:{source}", steps=50, guidance=2.5))
    from wmbench.watermarks.fourier_ring import generate

    data = toy_set(N_DESK, 512, seed=7, prefix="c7")
    cfg = RavenConfig(strength=0.15, steps=50, guidance=2.5, seed=7)
    k2 = make_key("dwt_dct_svd", 7)
    marked = [embed(x, k2) for x in data]
    raven_out = [run_raven(x, cfg, b)[0] for x in marked]
    acc = float(np.mean([statistic(y, k2)[0] for y in raven_out]))
    rng = derive_stream(7, "c7:noise")
    noisy = [apply_signal_attack(x, AttackSpec.default("gaussian_noise"), rng) for x in marked]
    ref = frechet_stats(marked)
    fd_raven, fd_noise = frechet_distance(frechet_stats(raven_out), ref), frechet_distance(frechet_stats(noisy), ref)

    kr = make_key("fourier_ring", 7, latent_shape=b.autoencoder.latent_shape(512, 512))
    null = [statistic(generate(1_000_000 + i, None, b, 512), kr, b)[0] for i in range(100)]
    phi = calibrate_threshold(null, 0.01)
    ring = [run_raven(generate(i, kr, b), cfg, b)[0] for i in range(N_DESK)]
    tpr = tpr_at_fpr([statistic(y, kr, b)[0] for y in ring], phi)
    secs = time.perf_counter() - t0
    record(7, acc <= 0.65 and tpr <= 0.2 and fd_raven < fd_noise,
           f"DwtDctSvd acc {acc:.3f} (<= 0.65), ring TPR {tpr:.3f} (<= 0.2), FD RAVEN {fd_raven:.4f} "
           f"< noise {fd_noise:.4f}", secs)


def _content(p: Path) -> bytes:
    if p.name == "manifest.json" or p.name.endswith(".trace.json"):
        d = json.loads(p.read_text())
        d.pop("seconds_per_image", None)
        d.pop("seconds", None)
        return json.dumps(d, sort_keys=True).encode()
    return p.read_bytes()


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(_content(p)).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_cli_smoke(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "demo.yaml"
    cfg.write_text(yaml.safe_dump(DEMO_CONFIG))
    codes = {}
    for run in ("a", "b"):
        codes[run] = [cli_main([st, "-c", str(cfg), "-w", str(tmp_path / run)])
                      for st in ("embed", "attack", "calibrate", "detect", "report")]
    try:
        load_report(tmp_path / "a" / "report" / "report.json")
        valid = True
    except Exception:  # noqa: BLE001
        valid = False
    same = _tree(tmp_path / "a") == _tree(tmp_path / "b")
    secs = time.perf_counter() - t0
    record(8, codes["a"] == [0] * 5 and valid and same,
           f"exit codes {codes['a']}, schema-valid={valid}, rerun bit-identical={same}", secs)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
