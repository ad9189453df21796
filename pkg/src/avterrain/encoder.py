"""Latent encoders for MFCC vectors and camera frames.

Two encoder kinds share one container: a small fully connected VAE trained by
plain SGD on the reparameterized ELBO (gradients derived by hand, no autodiff),
and a PCA basis used as a deterministic baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

RESIZE_SIDE = 128
POOL = 4
VARIANCE_EPS = 1e-12


# ---------------------------------------------------------------------------
# image preprocessing
# ---------------------------------------------------------------------------

def _bilinear_axis(n_in: int, n_out: int):
    """Source indices and weights for half-pixel-centered linear resampling."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(image: np.ndarray, side: int) -> np.ndarray:
    h, w = image.shape[:2]
    if h == side and w == side:
        return image
    r0, r1, rw = _bilinear_axis(h, side)
    c0, c1, cw = _bilinear_axis(w, side)
    rows = image[r0] * (1 - rw)[:, None, None] + image[r1] * rw[:, None, None]
    return rows[:, c0] * (1 - cw)[None, :, None] + rows[:, c1] * cw[None, :, None]


def image_preprocess(image) -> np.ndarray:
    """Center-crop to a square, resize to 128x128, 4x4 mean-pool, flatten to 3072 values."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h < RESIZE_SIDE or w < RESIZE_SIDE:
        raise ValueError(f"image {w}x{h} is smaller than {RESIZE_SIDE}x{RESIZE_SIDE}")
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    square = resize_bilinear(image[top:top + side, left:left + side], RESIZE_SIDE)
    k = RESIZE_SIDE // POOL
    pooled = square.reshape(k, POOL, k, POOL, 3).mean(axis=(1, 3))
    return pooled.reshape(-1)


def stream_image_vectors(stream) -> np.ndarray:
    images = stream.images
    if isinstance(images, np.ndarray) and images.shape[1:] == (RESIZE_SIDE, RESIZE_SIDE, 3):
        # already at working resolution: pool the whole uint8 stack at once
        k = RESIZE_SIDE // POOL
        out = np.empty((len(images), k * k * 3))
        for lo in range(0, len(images), 256):
            block = images[lo:lo + 256].reshape(-1, k, POOL, k, POOL, 3).sum(axis=(2, 4), dtype=np.int64)
            out[lo:lo + 256] = block.reshape(len(block), -1) / (255.0 * POOL * POOL)
        return out
    return np.stack([image_preprocess(stream.image(t)) for t in range(stream.n_frames)])


# ---------------------------------------------------------------------------
# VAE
# ---------------------------------------------------------------------------

@dataclass
class VaeParams:
    enc_w: np.ndarray   # (input, hidden)
    enc_b: np.ndarray
    mu_w: np.ndarray    # (hidden, latent)
    mu_b: np.ndarray
    lv_w: np.ndarray    # (hidden, latent)
    lv_b: np.ndarray
    dec_w: np.ndarray   # (latent, hidden)
    dec_b: np.ndarray
    out_w: np.ndarray   # (hidden, input)
    out_b: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.enc_w.shape[0], self.enc_w.shape[1], self.mu_w.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, flat: np.ndarray) -> "VaeParams":
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.asarray(flat[pos:pos + a.size], dtype=float).reshape(a.shape))
            pos += a.size
        return VaeParams(*out)

    def copy(self) -> "VaeParams":
        return VaeParams(*[a.copy() for a in self.arrays()])


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def vae_init(dims, seed: int = 0, rng: Optional[np.random.Generator] = None) -> VaeParams:
    n_in, n_hid, n_lat = dims
    if min(dims) < 1:
        raise ValueError(f"invalid VAE dims {dims}")
    rng = np.random.default_rng(seed) if rng is None else rng
    return VaeParams(
        enc_w=_uniform(rng, n_in, (n_in, n_hid)), enc_b=_uniform(rng, n_in, n_hid),
        mu_w=_uniform(rng, n_hid, (n_hid, n_lat)), mu_b=_uniform(rng, n_hid, n_lat),
        lv_w=_uniform(rng, n_hid, (n_hid, n_lat)), lv_b=_uniform(rng, n_hid, n_lat),
        dec_w=_uniform(rng, n_lat, (n_lat, n_hid)), dec_b=_uniform(rng, n_lat, n_hid),
        out_w=_uniform(rng, n_hid, (n_hid, n_in)), out_b=_uniform(rng, n_hid, n_in),
    )


def vae_posterior(params: VaeParams, x: np.ndarray):
    h = np.tanh(x @ params.enc_w + params.enc_b)
    return h, h @ params.mu_w + params.mu_b, h @ params.lv_w + params.lv_b


def vae_decode(params: VaeParams, z: np.ndarray) -> np.ndarray:
    g = np.tanh(z @ params.dec_w + params.dec_b)
    return g @ params.out_w + params.out_b


def kl_standard_normal(mu, logvar) -> np.ndarray:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis."""
    mu, logvar = np.asarray(mu, dtype=float), np.asarray(logvar, dtype=float)
    return -0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar), axis=-1)


def vae_loss_and_grad(params: VaeParams, batch, noise):
    """Negative ELBO averaged over the batch, and its gradient.

    Per sample: squared reconstruction error of decode(mu + exp(logvar/2) * eps)
    plus the closed-form KL to the standard normal prior.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    eps = np.atleast_2d(np.asarray(noise, dtype=float))
    n_in, _, n_lat = params.dims
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != n_in:
        raise ValueError(f"batch dim {x.shape[1]} != encoder input dim {n_in}")
    if eps.shape != (x.shape[0], n_lat):
        raise ValueError(f"noise shape {eps.shape} != {(x.shape[0], n_lat)}")
    B = x.shape[0]

    h, mu, lv = vae_posterior(params, x)
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    g = np.tanh(z @ params.dec_w + params.dec_b)
    recon = g @ params.out_w + params.out_b
    resid = x - recon
    loss = (np.sum(resid**2) + np.sum(kl_standard_normal(mu, lv))) / B

    d_recon = -2.0 * resid / B
    d_out_w = g.T @ d_recon
    d_out_b = d_recon.sum(axis=0)
    d_gpre = (d_recon @ params.out_w.T) * (1.0 - g**2)
    d_dec_w = z.T @ d_gpre
    d_dec_b = d_gpre.sum(axis=0)
    d_z = d_gpre @ params.dec_w.T
    d_mu = d_z + mu / B
    d_lv = 0.5 * d_z * eps * std + 0.5 * (np.exp(lv) - 1.0) / B
    d_hpre = (d_mu @ params.mu_w.T + d_lv @ params.lv_w.T) * (1.0 - h**2)

    grad = VaeParams(
        enc_w=x.T @ d_hpre, enc_b=d_hpre.sum(axis=0),
        mu_w=h.T @ d_mu, mu_b=d_mu.sum(axis=0),
        lv_w=h.T @ d_lv, lv_b=d_lv.sum(axis=0),
        dec_w=d_dec_w, dec_b=d_dec_b,
        out_w=d_out_w, out_b=d_out_b,
    )
    return float(loss), grad


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"VAE training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


def vae_train(data, dims, steps: int, step_size: float, seed: int,
              batch_size: int = 32) -> VaeParams:
    """Plain minibatch SGD; all randomness (init, batches, noise) comes from ``seed``."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise ValueError("empty training data")
    if data.shape[1] != dims[0]:
        raise ValueError(f"data dim {data.shape[1]} != input dim {dims[0]}")
    rng = np.random.default_rng(seed)
    params = vae_init(dims, rng=rng)
    n = data.shape[0]
    bs = min(batch_size, n)
    order, pos = rng.permutation(n), 0
    for step in range(steps):
        if pos + bs > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos:pos + bs]
        pos += bs
        eps = rng.standard_normal((bs, dims[2]))
        loss, grad = vae_loss_and_grad(params, data[idx], eps)
        if not np.isfinite(loss):
            raise DivergenceError(step, loss)
        for p, gp in zip(params.arrays(), grad.arrays()):
            p -= step_size * gp
    return params


def reconstruction_error(params: VaeParams, data) -> float:
    """Mean squared reconstruction error through the posterior mean."""
    x = np.atleast_2d(np.asarray(data, dtype=float))
    _, mu, _ = vae_posterior(params, x)
    return float(np.mean(np.sum((x - vae_decode(params, mu)) ** 2, axis=1)))


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def pca_fit(data, latent_dim: int):
    """Mean and (latent_dim, input) orthonormal component rows, sign-fixed."""
    x = np.atleast_2d(np.asarray(data, dtype=float))
    if latent_dim > x.shape[1]:
        raise ValueError(f"latent_dim {latent_dim} exceeds input dim {x.shape[1]}")
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = np.zeros((latent_dim, x.shape[1]))
    k = min(latent_dim, vt.shape[0])
    comps[:k] = vt[:k]
    if k < latent_dim:
        # fewer samples than components: complete the basis deterministically
        q, _ = np.linalg.qr(np.concatenate([comps[:k].T, np.eye(x.shape[1])], axis=1))
        comps[k:] = q[:, k:latent_dim].T
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(latent_dim), pivot])
    signs[signs == 0] = 1.0
    return mean, comps * signs[:, None]


# ---------------------------------------------------------------------------
# encoder container
# ---------------------------------------------------------------------------

@dataclass
class Encoder:
    kind: str                      # "vae" or "pca"
    input_mean: np.ndarray
    input_scale: np.ndarray
    vae: Optional[VaeParams] = None
    pca_mean: Optional[np.ndarray] = None
    pca_components: Optional[np.ndarray] = None
    seed: int = 0

    @property
    def input_dim(self) -> int:
        return len(self.input_mean)

    @property
    def latent_dim(self) -> int:
        if self.kind == "vae":
            return self.vae.dims[2]
        return self.pca_components.shape[0]

    def encode(self, x) -> np.ndarray:
        """Deterministic latent code: VAE posterior mean or PCA projection.

        Accepts one vector or a batch of row vectors.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.shape[1] != self.input_dim:
            raise ValueError(f"input dim {xb.shape[1]} != encoder input dim {self.input_dim}")
        xb = (xb - self.input_mean) / self.input_scale
        if self.kind == "vae":
            _, z, _ = vae_posterior(self.vae, xb)
        else:
            z = (xb - self.pca_mean) @ self.pca_components.T
        return z[0] if single else z


def fit_encoder(data, kind: str = "vae", hidden_dim: int = 64, latent_dim: int = 8,
                steps: int = 1000, step_size: float = 1e-3, seed: int = 0,
                batch_size: int = 32, normalize_inputs: bool = True) -> Encoder:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if normalize_inputs:
        # center per dimension but scale globally, so low-variance inputs are not amplified
        mean = data.mean(axis=0)
        rms = float(np.sqrt(np.mean((data - mean) ** 2)))
        scale = np.full(data.shape[1], rms if rms > 1e-12 else 1.0)
    else:
        mean, scale = np.zeros(data.shape[1]), np.ones(data.shape[1])
    xn = (data - mean) / scale
    if kind == "vae":
        params = vae_train(xn, (data.shape[1], hidden_dim, latent_dim), steps, step_size, seed, batch_size)
        return Encoder("vae", mean, scale, vae=params, seed=seed)
    if kind == "pca":
        pmean, comps = pca_fit(xn, latent_dim)
        return Encoder("pca", mean, scale, pca_mean=pmean, pca_components=comps, seed=seed)
    raise ValueError(f"unknown encoder kind {kind!r}")


def encode(kind: Encoder, x) -> np.ndarray:
    return kind.encode(x)


STANDARDIZATIONS = ("dims", "global", "none")


def standardize_latents(latents) -> np.ndarray:
    """Per-dimension z-scores over the run; near-constant dimensions are only centered."""
    z = _check_latents(latents)
    centered = z - z.mean(axis=0)
    var = centered.var(axis=0)
    scale = np.where(var < VARIANCE_EPS, 1.0, np.sqrt(var))
    return centered / scale


def isotropic_standardize(latents) -> np.ndarray:
    """Center, then divide by one pooled standard deviation shared by all dimensions.

    Afterwards the per-dimension variance averages to 1. Unlike
    :func:`standardize_latents` this keeps the relative spread of the
    dimensions, so a direction the encoder barely uses stays small.
    """
    z = _check_latents(latents)
    centered = z - z.mean(axis=0)
    pooled = float(np.mean(centered**2))
    return centered / np.sqrt(pooled) if pooled > VARIANCE_EPS else centered


def scale_latents(latents, method: str = "global") -> np.ndarray:
    if method == "dims":
        return standardize_latents(latents)
    if method == "global":
        return isotropic_standardize(latents)
    if method == "none":
        return np.asarray(latents, dtype=float)
    raise ValueError(f"unknown standardization {method!r}; choose from {STANDARDIZATIONS}")


def _check_latents(latents) -> np.ndarray:
    z = np.asarray(latents, dtype=float)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("standardization needs at least 2 latent vectors")
    return z


# ---------------------------------------------------------------------------
# serialization: one JSON header line, then raw little-endian float64 arrays
# ---------------------------------------------------------------------------

_MAGIC = b"AVTENC1\n"


def _payload(enc: Encoder) -> list[tuple[str, np.ndarray]]:
    arrays = [("input_mean", enc.input_mean), ("input_scale", enc.input_scale)]
    if enc.kind == "vae":
        arrays += [(f.name, getattr(enc.vae, f.name)) for f in fields(VaeParams)]
    else:
        arrays += [("pca_mean", enc.pca_mean), ("pca_components", enc.pca_components)]
    return arrays


def save_encoder(enc: Encoder, path) -> None:
    arrays = _payload(enc)
    if enc.kind == "vae":
        dims = list(enc.vae.dims)
    else:
        dims = [enc.input_dim, 0, enc.latent_dim]
    header = {
        "kind": enc.kind,
        "dims": dims,
        "seed": enc.seed,
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_encoder(path) -> Encoder:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path}: not an encoder file")
    nl = raw.index(b"\n", len(_MAGIC))
    header = json.loads(raw[len(_MAGIC):nl])
    pos, arrays = nl + 1, {}
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    if pos != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes")
    common = dict(input_mean=arrays["input_mean"], input_scale=arrays["input_scale"], seed=header["seed"])
    if header["kind"] == "vae":
        vae = VaeParams(*[arrays[f.name] for f in fields(VaeParams)])
        return Encoder("vae", vae=vae, **common)
    return Encoder("pca", pca_mean=arrays["pca_mean"], pca_components=arrays["pca_components"], **common)
