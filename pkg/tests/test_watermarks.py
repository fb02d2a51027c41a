import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmbench.attack.baselines import AttackSpec, apply_signal_attack
from wmbench.core import ImageBuffer, derive_stream, psnr
from wmbench.evaluation.metrics import calibrate_threshold
from wmbench.watermarks import (
    BackendRequired,
    DetectionOutcome,
    PayloadTooLarge,
    WatermarkKey,
    bit_accuracy,
    decode_bits,
    detect,
    embed,
    make_key,
    statistic,
)
from wmbench.watermarks.fourier_ring import generate, half_mask, ring_mask

BITSTREAM = ("dwt_dct", "dwt_dct_svd")


@pytest.mark.parametrize("scheme", BITSTREAM)
def test_clean_round_trip_and_psnr(scheme, toy64):
    key = make_key(scheme, 3)
    for x in toy64:
        x_w = embed(x, key)
        assert statistic(x_w, key)[0] >= 0.99
        assert psnr(x, x_w) >= 38.0


@pytest.mark.parametrize("scheme", BITSTREAM)
def test_round_trip_survives_png_quantisation(scheme, toy64, tmp_path):
    from wmbench.core import load_png, save_png

    key = make_key(scheme, 4)
    x_w = embed(toy64[0], key)
    save_png(x_w, tmp_path / "m.png")
    assert statistic(load_png(tmp_path / "m.png"), key)[0] >= 0.99


@pytest.mark.parametrize("scheme", BITSTREAM)
def test_null_bit_accuracy(scheme):
    accs = []
    for i in range(200):
        x = ImageBuffer(derive_stream(i, "null").uniform(size=(64, 64, 3)))
        accs.append(statistic(x, make_key(scheme, 10_000 + i))[0])
    assert abs(np.mean(accs) - 0.5) <= 0.05


@pytest.mark.parametrize("scheme", BITSTREAM)
def test_payload_too_large(scheme, rand_img):
    key = make_key(scheme, 0, n_bits=64)
    with pytest.raises(PayloadTooLarge):
        embed(rand_img(0, 48, 48), key)  # 36 blocks < 64 bits


def test_payload_lengths():
    for n in (32, 48, 64):
        assert make_key("dwt_dct", 0, n_bits=n).n_bits == n
    with pytest.raises(ValueError):
        make_key("dwt_dct", 0, n_bits=40)


def test_bit_accuracy_examples():
    b = np.array([0, 1, 1, 0] * 8, dtype=np.uint8)
    assert bit_accuracy(b, b) == 1.0
    assert bit_accuracy(1 - b, b) == 0.0
    with pytest.raises(ValueError):
        bit_accuracy(b[:31], b)
    r = derive_stream(0, "ba")
    fixed = r.bits(10_000)
    assert abs(bit_accuracy(r.bits(10_000), fixed) - 0.5) <= 0.02


def test_decision_follows_threshold():
    o = DetectionOutcome(1.0, 1.0, None)
    assert o.detected and o.decision == "detected"
    assert not DetectionOutcome(0.4, 0.5, None).detected
    assert not DetectionOutcome(0.9, float("nan"), None).detected


def test_perfect_and_complement_decode(toy64):
    key = make_key("dwt_dct", 5)
    x_w = embed(toy64[1], key)
    out = detect(x_w, key, threshold=1.0)
    assert out.statistic == 1.0 and out.detected
    flipped = WatermarkKey("dwt_dct", key.strength, key.base_seed, bits=1 - key.bits)
    assert detect(x_w, flipped, threshold=0.5).statistic == 0.0


@pytest.mark.parametrize("scheme", BITSTREAM)
def test_deterministic_embed_and_pure_detect(scheme, toy64):
    key = make_key(scheme, 6)
    a, b = embed(toy64[2], key), embed(toy64[2], key)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(decode_bits(a, key), decode_bits(a, key))


@pytest.mark.parametrize("scheme", BITSTREAM)
def test_key_json_round_trip(scheme):
    key = make_key(scheme, 7, n_bits=48)
    back = WatermarkKey.from_json(key.to_json())
    assert back.scheme == scheme and np.array_equal(back.bits, key.bits)
    assert back.strength == key.strength and back.base_seed == key.base_seed


def test_ring_key_json_round_trip():
    key = make_key("fourier_ring", 8, latent_shape=(4, 16, 16))
    back = WatermarkKey.from_json(key.to_json())
    assert np.array_equal(back.ring_mask, key.ring_mask)
    assert np.array_equal(back.ring_pattern, key.ring_pattern)
    assert back.channel == key.channel == 3


def test_ring_mask_rejects_asymmetric():
    key = make_key("fourier_ring", 0, latent_shape=(4, 16, 16))
    bad = key.ring_mask.copy()
    bad[8, 10] = True
    bad[8, 6] = False
    with pytest.raises(ValueError):
        WatermarkKey("fourier_ring", 1.0, 0, ring_pattern=key.ring_pattern, ring_mask=bad, channel=3)


def test_half_mask_covers_each_pair_once():
    m = ring_mask(16, 16, 3)
    h = half_mask(m)
    ky, kx = np.nonzero(h)
    reps = {(a, b) for a, b in zip(ky - 8, kx - 8)}
    for a, b in reps:
        assert (a, b) == (0, 0) or (-a, -b) not in reps
    assert len(reps) == (m.sum() + 1) // 2


def test_bit_accuracy_monotone_in_noise(toy64):
    key = make_key("dwt_dct_svd", 9)
    marked = [embed(x, key) for x in toy64]
    prev = 1.0
    for k, s in enumerate((0.0, 0.01, 0.02, 0.04, 0.08, 0.16)):
        spec = AttackSpec("gaussian_noise", {"sigma": s})
        accs = [statistic(apply_signal_attack(x, spec, derive_stream(k, f"n{i}")), key)[0]
                for i, x in enumerate(marked)]
        acc = float(np.mean(accs))
        assert acc <= prev + 0.02
        prev = acc


def test_dwt_dct_svd_directional_attacks(toy64):
    key = make_key("dwt_dct_svd", 10)
    marked = [embed(x, key) for x in toy64]
    blur = np.mean([statistic(apply_signal_attack(x, AttackSpec.default("gaussian_blur")), key)[0] for x in marked])
    bright = np.mean([statistic(apply_signal_attack(x, AttackSpec.default("brightness")), key)[0] for x in marked])
    assert blur >= 0.9
    assert bright <= 0.7


# --- fourier ring -------------------------------------------------------------

@pytest.fixture(scope="module")
def ring_setup(backend):
    shape = backend.autoencoder.latent_shape(64, 64)
    key = make_key("fourier_ring", 21, latent_shape=shape)
    null = [statistic(generate(500_000 + i, None, backend, 64), key, backend)[0] for i in range(100)]
    return key, null


def test_fourier_ring_detects_immediately(backend, ring_setup):
    key, null = ring_setup
    phi = calibrate_threshold(null, 0.01)
    hits = [statistic(embed(i, key, backend), key, backend)[0] > phi for i in range(100)]
    assert np.mean(hits) >= 0.8


def test_fourier_ring_other_key_inside_null_band(backend, ring_setup):
    key, null = ring_setup
    other = make_key("fourier_ring", 22, latent_shape=tuple(key.extra["latent_shape"]))
    lo, hi = np.quantile(null, [0.025, 0.975])
    stats = [statistic(embed(i, key, backend), other, backend)[0] for i in range(40)]
    assert np.mean([(lo <= s <= hi) for s in stats]) >= 0.8


def test_fourier_ring_null_rarely_detected(backend, ring_setup):
    key, null = ring_setup
    phi = calibrate_threshold(null, 0.01)
    fresh = [statistic(generate(600_000 + i, None, backend, 64), key, backend)[0] for i in range(100)]
    assert np.mean(np.asarray(fresh) >= phi) <= 0.05


def test_fourier_ring_needs_backend(rand_img):
    key = make_key("fourier_ring", 0, latent_shape=(4, 16, 16))
    with pytest.raises(BackendRequired):
        detect(rand_img(0, 64, 64), key)
    with pytest.raises(BackendRequired):
        embed(0, key)


def test_fourier_ring_generation_deterministic(backend):
    key = make_key("fourier_ring", 1, latent_shape=backend.autoencoder.latent_shape(32, 32))
    assert np.array_equal(embed(3, key, backend).values, embed(3, key, backend).values)


# --- external adapter ---------------------------------------------------------

REF = [sys.executable, "-m", "wmbench.adapters.reference"]


def test_external_adapter_round_trip(toy64):
    key = make_key("external", 2, command=REF)
    x_w = embed(toy64[0], key)
    assert statistic(x_w, key)[0] >= 0.99
    assert psnr(toy64[0], x_w) >= 38.0
    assert abs(statistic(toy64[1], key)[0] - 0.5) <= 0.3


def test_external_adapter_failure_is_reported(toy64):
    from wmbench.watermarks import AdapterError

    key = make_key("external", 2, command=[sys.executable, "-c", "import sys; sys.exit(3)"])
    with pytest.raises(AdapterError, match="exited 3"):
        statistic(toy64[0], key)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_key_bits_are_reproducible(seed):
    a = make_key("dwt_dct", seed)
    assert a.bits.shape == (32,)
    assert set(np.unique(a.bits)) <= {0, 1}
    assert np.array_equal(a.bits, make_key("dwt_dct", seed).bits)
