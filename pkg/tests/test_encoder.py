import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avterrain.encoder import (DivergenceError, Encoder, RESIZE_SIDE, fit_encoder, image_preprocess,
                               kl_standard_normal, load_encoder, pca_fit, reconstruction_error,
                               save_encoder, standardize_latents, vae_init, vae_loss_and_grad,
                               vae_train)


def finite_difference(params, batch, noise, h=1e-5):
    flat = params.flatten()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        lu, _ = vae_loss_and_grad(params.unflatten(up), batch, noise)
        ld, _ = vae_loss_and_grad(params.unflatten(down), batch, noise)
        grad[i] = (lu - ld) / (2 * h)
    return grad


def gradient_relative_error(seed, dims=(4, 3, 2), batch=5):
    rng = np.random.default_rng(seed)
    params = vae_init(dims, seed=seed)
    x = rng.standard_normal((batch, dims[0]))
    eps = rng.standard_normal((batch, dims[2]))
    _, grad = vae_loss_and_grad(params, x, eps)
    analytic = grad.flatten()
    numeric = finite_difference(params, x, eps)
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric))


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    assert gradient_relative_error(seed) < 1e-4


@pytest.mark.parametrize("dims", [(6, 5, 3), (3, 8, 1)])
def test_gradient_other_shapes(dims):
    rng = np.random.default_rng(7)
    params = vae_init(dims, seed=7)
    x = rng.standard_normal((4, dims[0]))
    eps = rng.standard_normal((4, dims[2]))
    _, grad = vae_loss_and_grad(params, x, eps)
    num = finite_difference(params, x, eps)
    assert np.linalg.norm(grad.flatten() - num) / np.linalg.norm(num) < 1e-4


def test_kl_closed_form_values():
    assert kl_standard_normal([0.0], [0.0]) == 0.0
    assert kl_standard_normal([1.0], [0.0]) == 0.5


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=6))
def test_kl_nonnegative(pairs):
    mu = np.array([p[0] for p in pairs])
    lv = np.array([p[1] for p in pairs])
    kl = kl_standard_normal(mu, lv)
    assert kl >= -1e-12
    if np.allclose(mu, 0) and np.allclose(lv, 0):
        assert kl == pytest.approx(0.0, abs=1e-12)


def test_loss_dimension_checks():
    params = vae_init((4, 3, 2), seed=0)
    with pytest.raises(ValueError):
        vae_loss_and_grad(params, np.zeros((2, 5)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        vae_loss_and_grad(params, np.zeros((2, 4)), np.zeros((3, 2)))


def test_training_reduces_reconstruction_error():
    v = np.random.default_rng(0).standard_normal(6)
    data = np.tile(v, (200, 1))
    init = vae_train(data, (6, 8, 2), steps=0, step_size=0.01, seed=3)
    trained = vae_train(data, (6, 8, 2), steps=300, step_size=0.01, seed=3)
    assert reconstruction_error(trained, data) < reconstruction_error(init, data)


def test_training_deterministic():
    data = np.random.default_rng(1).standard_normal((50, 5))
    a = vae_train(data, (5, 4, 2), steps=40, step_size=0.01, seed=11)
    b = vae_train(data, (5, 4, 2), steps=40, step_size=0.01, seed=11)
    assert a.flatten().tobytes() == b.flatten().tobytes()


def test_zero_steps_is_initialization():
    data = np.random.default_rng(1).standard_normal((10, 5))
    trained = vae_train(data, (5, 4, 2), steps=0, step_size=0.1, seed=4)
    fresh = vae_init((5, 4, 2), rng=np.random.default_rng(4))
    np.testing.assert_array_equal(trained.flatten(), fresh.flatten())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # the blow-up is the point
def test_divergence_reports_step():
    data = np.random.default_rng(1).standard_normal((20, 5)) * 1e3
    with pytest.raises(DivergenceError) as info:
        vae_train(data, (5, 4, 2), steps=500, step_size=10.0, seed=0)
    assert info.value.step >= 0


def test_initialization_bounds():
    p = vae_init((10, 7, 3), seed=0)
    assert np.all(np.abs(p.enc_w) <= 1 / np.sqrt(10))
    assert np.all(np.abs(p.out_w) <= 1 / np.sqrt(7))
    assert np.all(np.abs(p.dec_w) <= 1 / np.sqrt(3))


# -- encode -------------------------------------------------------------------

def test_pca_identity_basis_truncates():
    enc = Encoder("pca", np.zeros(4), np.ones(4), pca_mean=np.zeros(4), pca_components=np.eye(4)[:2])
    np.testing.assert_array_equal(enc.encode(np.array([3.0, -1.0, 7.0, 2.0])), [3.0, -1.0])


def test_pca_line_recovers_position():
    direction = np.array([3.0, 4.0]) / 5.0
    pos = np.random.default_rng(0).uniform(-5, 5, 60)
    data = pos[:, None] * direction
    mean, comps = pca_fit(data, 1)
    # eigendecomposition oracle on the 2x2 covariance
    evals, evecs = np.linalg.eigh(np.cov(data.T))
    assert evals[0] == pytest.approx(0.0, abs=1e-10)
    assert abs(comps[0] @ evecs[:, 1]) == pytest.approx(1.0, abs=1e-12)
    enc = Encoder("pca", np.zeros(2), np.ones(2), pca_mean=mean, pca_components=comps)
    z = enc.encode(data)[:, 0]
    sign = np.sign(z[0] * (pos[0] - pos.mean()))
    np.testing.assert_allclose(sign * z, pos - pos.mean(), atol=1e-10)


def test_pca_orthonormal_and_monotone_reconstruction():
    data = np.random.default_rng(2).standard_normal((80, 7)) @ np.random.default_rng(3).standard_normal((7, 7))
    errors = []
    for k in range(1, 8):
        mean, comps = pca_fit(data, k)
        np.testing.assert_allclose(comps @ comps.T, np.eye(k), atol=1e-8)
        recon = (data - mean) @ comps.T @ comps + mean
        errors.append(np.sum((data - recon) ** 2))
    assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))


def test_vae_encode_deterministic_and_batched():
    data = np.random.default_rng(4).standard_normal((30, 6))
    enc = fit_encoder(data, kind="vae", hidden_dim=5, latent_dim=2, steps=20, step_size=0.01, seed=0)
    x = data[3]
    assert enc.encode(x).tobytes() == enc.encode(x).tobytes()
    np.testing.assert_allclose(enc.encode(data)[3], enc.encode(x), atol=1e-12)
    with pytest.raises(ValueError):
        enc.encode(np.zeros(5))


@pytest.mark.parametrize("kind", ["vae", "pca"])
def test_encoder_file_round_trip(tmp_path, kind):
    data = np.random.default_rng(5).standard_normal((40, 6))
    enc = fit_encoder(data, kind=kind, hidden_dim=4, latent_dim=3, steps=10, step_size=0.01, seed=9)
    path = tmp_path / "enc.bin"
    save_encoder(enc, path)
    back = load_encoder(path)
    assert back.kind == kind and back.seed == 9 and back.latent_dim == 3
    np.testing.assert_array_equal(back.encode(data), enc.encode(data))
    header = path.read_bytes().split(b"\n")[1]
    assert b'"dims"' in header and b'"kind"' in header and b'"seed"' in header


# -- standardization ------------------------------------------------------------

def test_standardize_two_points():
    np.testing.assert_array_equal(standardize_latents([[0.0], [2.0]]), [[-1.0], [1.0]])


def test_standardize_constant_dimension_centered_only():
    z = standardize_latents([[5.0, 1.0], [5.0, 3.0], [5.0, 8.0]])
    np.testing.assert_array_equal(z[:, 0], 0.0)


def test_standardize_random_moments():
    z = standardize_latents(np.random.default_rng(6).standard_normal((100, 4)) * [1, 10, 0.1, 3] + 7)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z.var(axis=0), 1.0, atol=1e-9)


def test_standardize_needs_two():
    with pytest.raises(ValueError):
        standardize_latents([[1.0, 2.0]])


# -- images -----------------------------------------------------------------------

def test_gray_image_constant_vector():
    v = image_preprocess(np.full((200, 300, 3), 0.5))
    assert v.shape == (3072,)
    np.testing.assert_allclose(v, 0.5, atol=1e-12)


def test_center_crop_uses_middle_square():
    img = np.zeros((256, 512, 3))
    img[:, 128:384] = 1.0          # the central 256x256 block is white
    np.testing.assert_allclose(image_preprocess(img), 1.0, atol=1e-12)


def test_checkerboard_pools_to_half():
    yy, xx = np.mgrid[:256, :256]
    board = (((yy // 4) + (xx // 4)) % 2).astype(float)     # period 8
    img = np.repeat(board[:, :, None], 3, axis=2)
    np.testing.assert_allclose(image_preprocess(img), 0.5, atol=1e-12)


def test_small_image_rejected():
    with pytest.raises(ValueError):
        image_preprocess(np.zeros((127, 400, 3)))


def test_working_resolution_passthrough():
    img = np.random.default_rng(0).random((RESIZE_SIDE, RESIZE_SIDE, 3))
    v = image_preprocess(img)
    np.testing.assert_allclose(v[:3], img[:4, :4].mean(axis=(0, 1)), atol=1e-12)
