import numpy as np
import pytest

torch = pytest.importorskip("torch")
diffusers = pytest.importorskip("diffusers")

from wmbench.attack.raven import RavenConfig, run_raven  # noqa: E402
from wmbench.diffusion.attention import AttentionRouter  # noqa: E402
from wmbench.diffusion.backend import BackendError, BackendSpec, load_backend  # noqa: E402
from wmbench.diffusion.pretrained import backend_from_modules  # noqa: E402
from wmbench.toydata import toy_set  # noqa: E402

pytestmark = pytest.mark.pretrained


@pytest.fixture(scope="module")
def tiny_diffusers():
    from diffusers import AutoencoderKL, UNet2DConditionModel

    torch.manual_seed(0)
    vae = AutoencoderKL(block_out_channels=(8, 16), down_block_types=("DownEncoderBlock2D",) * 2,
                        up_block_types=("UpDecoderBlock2D",) * 2, latent_channels=4, norm_num_groups=4,
                        layers_per_block=1)
    unet = UNet2DConditionModel(sample_size=16, in_channels=4, out_channels=4, block_out_channels=(16, 32),
                                down_block_types=("CrossAttnDownBlock2D", "DownBlock2D"),
                                up_block_types=("UpBlock2D", "CrossAttnUpBlock2D"), cross_attention_dim=8,
                                layers_per_block=1, norm_num_groups=4, attention_head_dim=4)
    ab = np.cumprod(1 - np.linspace(1e-4, 0.02, 100))
    return backend_from_modules(vae, unet, ab, np.zeros((3, 8)), BackendSpec(name="diffusers:test", steps=10))


def test_adapter_contract(tiny_diffusers):
    b = tiny_diffusers
    assert b.factor == 2
    assert sorted(b.denoiser.sites) == [("down", 0), ("mid", 0), ("up", 0), ("up", 1)]
    x = toy_set(1, 32, seed=3)[0]
    z = b.encode(x)
    assert z.shape == (4, 16, 16)
    assert b.decode(z).shape == x.shape
    eps = b.denoiser.predict(z.tagged(50), 50)
    assert eps.shape == z.shape and np.all(np.isfinite(eps))


def test_plain_router_is_neutral(tiny_diffusers):
    b = tiny_diffusers
    z = b.encode(toy_set(1, 32, seed=4)[0]).tagged(30)
    plain = b.denoiser.predict(z, 30)
    routed = b.denoiser.predict(z, 30, router=AttentionRouter("standard"))
    assert np.allclose(plain, routed, atol=1e-6)


def test_view_routing_reaches_self_attention(tiny_diffusers):
    b = tiny_diffusers
    zs = np.stack([b.encode(x).values for x in toy_set(2, 32, seed=5)])
    router = AttentionRouter("view_guided", pairs={1: 0})
    eps = b.denoiser.predict(zs, 30, router=router)
    assert {site for site, _ in router.calls} == set(b.denoiser.sites)
    assert not np.allclose(eps[1], b.denoiser.predict(zs[1:], 30)[0], atol=1e-6)


def test_raven_runs_on_adapter(tiny_diffusers):
    x = toy_set(1, 32, seed=6)[0]
    y, tr = run_raven(x, RavenConfig(strength=0.3, steps=10, seed=0), tiny_diffusers)
    assert y.shape == x.shape
    assert sorted(tr.routed_sites) == ["down.0", "mid.0", "up.0", "up.1"]
    y2, _ = run_raven(x, RavenConfig(strength=0.3, steps=10, seed=0), tiny_diffusers)
    assert np.array_equal(y.values, y2.values)


def test_missing_weights_give_backend_error(tmp_path, monkeypatch):
    monkeypatch.setenv("HF_HUB_OFFLINE", "1")
    with pytest.raises(BackendError, match="WMBENCH_WEIGHTS_DIR"):
        load_backend(BackendSpec(name="diffusers:x", weights_path=str(tmp_path / "missing")))
