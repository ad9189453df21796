"""Sequence proposal, switched affinity and agglomerative merging.

Frames are first grouped into *sequences*: maximal runs sharing a label from
a diagonal Gaussian mixture fitted to audio latents. Each sequence is then
summarized by its mean audio and mean visual latent, sequences are compared
with the smaller of the two Euclidean distances, and average-linkage
agglomeration merges them down to the requested number of terrain classes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
MODES = ("switched", "audio_only", "visual_only", "concat")
LINKAGES = ("average", "single", "complete")
TIE_RTOL = 1e-12


# ---------------------------------------------------------------------------
# Gaussian mixture EM
# ---------------------------------------------------------------------------

@dataclass
class GmmModel:
    weights: np.ndarray     # (K,)
    means: np.ndarray       # (K, d)
    variances: np.ndarray   # (K, d)
    loglik_history: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _check_features(features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("features must be a 2-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature entries")
    return x


def component_log_densities(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """log(w_k) + log N(x | mean_k, diag(var_k)) for every point and component, (n, K)."""
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    diff2 = (x[:, None, :] - model.means[None, :, :]) ** 2
    maha = np.sum(diff2 / model.variances[None, :, :], axis=2)
    log_det = np.sum(np.log(model.variances), axis=1)
    return log_w[None, :] - 0.5 * (maha + log_det[None, :] + model.dim * np.log(2 * np.pi))


def e_step(model: GmmModel, x: np.ndarray):
    """Responsibilities (n, K) and the total data log-likelihood."""
    joint = component_log_densities(model, x)
    norm = logsumexp(joint, axis=1)
    return np.exp(joint - norm[:, None]), float(np.sum(norm))


def _m_step(x: np.ndarray, resp: np.ndarray, prev: GmmModel, floor: float) -> GmmModel:
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    means = prev.means.copy()
    variances = prev.variances.copy()
    live = nk > 1e-12
    means[live] = (resp[:, live].T @ x) / nk[live, None]
    for k in np.flatnonzero(live):
        variances[k] = resp[:, k] @ (x - means[k]) ** 2 / nk[k]
    return GmmModel(weights, means, np.maximum(variances, floor))


def _init_means(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, then D^2-weighted draws."""
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].copy()


def em_fit(features, K: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-6,
           variance_floor: float = VARIANCE_FLOOR) -> GmmModel:
    """Fit a diagonal-covariance Gaussian mixture by EM.

    Stops when the log-likelihood gain drops below ``tol`` or after
    ``max_iter`` iterations. ``loglik_history[i]`` is the log-likelihood of the
    parameters after ``i`` M-steps (entry 0 is the initialization).
    """
    x = _check_features(features)
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > len(x):
        raise ValueError(f"K={K} exceeds sample count {len(x)}")
    rng = np.random.default_rng(seed)
    var0 = np.maximum(x.var(axis=0), variance_floor)
    model = GmmModel(np.full(K, 1.0 / K), _init_means(x, K, rng), np.tile(var0, (K, 1)))

    resp, ll = e_step(model, x)
    history = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        model = _m_step(x, resp, model, variance_floor)
        resp, ll_new = e_step(model, x)
        history.append(ll_new)
        if ll_new - ll < tol:
            converged = True
            break
        ll = ll_new
    model.loglik_history = history
    model.n_iter = it
    model.converged = converged
    return model


def em_assign(model: GmmModel, features) -> np.ndarray:
    """Most responsible component per point; ties go to the smaller index."""
    x = _check_features(features)
    if x.shape[1] != model.dim:
        raise ValueError(f"feature dim {x.shape[1]} != model dim {model.dim}")
    return np.argmax(component_log_densities(model, x), axis=1)


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sequence:
    id: int
    start: int   # inclusive
    end: int     # exclusive
    em_label: int

    def __len__(self) -> int:
        return self.end - self.start


def detect_sequences(labels) -> list[Sequence]:
    """Split a frame label string at every label change."""
    c = np.asarray(labels)
    if c.size == 0:
        raise ValueError("empty label sequence")
    bounds = np.concatenate([[0], np.flatnonzero(c[1:] != c[:-1]) + 1, [len(c)]])
    return [
        Sequence(i, int(s), int(e), int(c[s]))
        for i, (s, e) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]


@dataclass
class SequenceFeatures:
    audio_mean: np.ndarray
    visual_mean: np.ndarray


def average_sequence_features(seqs, audio, visual) -> list[SequenceFeatures]:
    audio = np.asarray(audio, dtype=float)
    visual = np.asarray(visual, dtype=float)
    n = min(len(audio), len(visual))
    out = []
    for s in seqs:
        if s.start < 0 or s.end > n or s.start >= s.end:
            raise IndexError(f"sequence [{s.start}, {s.end}) outside latent range [0, {n})")
        out.append(SequenceFeatures(audio[s.start:s.end].mean(axis=0), visual[s.start:s.end].mean(axis=0)))
    return out


def _pairwise(z: np.ndarray) -> np.ndarray:
    diff = z[:, None, :] - z[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=2))


def sequence_affinity(feats, mode: str = "switched") -> np.ndarray:
    """Pairwise sequence distances; ``switched`` keeps the smaller modality distance."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    if len(feats) < 1:
        raise ValueError("no sequences")
    try:
        za = np.stack([f.audio_mean for f in feats])
        zv = np.stack([f.visual_mean for f in feats])
    except ValueError:
        raise ValueError("latent dimension differs across sequences") from None
    if mode == "audio_only":
        d = _pairwise(za)
    elif mode == "visual_only":
        d = _pairwise(zv)
    elif mode == "concat":
        d = _pairwise(np.concatenate([za, zv], axis=1))
    else:
        d = np.minimum(_pairwise(za), _pairwise(zv))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


# ---------------------------------------------------------------------------
# agglomeration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Merge:
    a: int         # id (smallest member) of the first cluster, a < b
    b: int
    height: float


def merge_trace(aff, linkage: str = "average", n_merges: Optional[int] = None) -> list[Merge]:
    """Greedy agglomeration on a precomputed distance matrix.

    Clusters are named by their smallest member index. Each step merges the
    closest pair, ties resolved by the lexicographically smallest (a, b).
    Linkage distances are maintained with the Lance-Williams recurrence.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}; choose from {LINKAGES}")
    d = np.array(aff, dtype=float)
    n = d.shape[0]
    if d.shape != (n, n):
        raise ValueError("affinity matrix must be square")
    n_merges = n - 1 if n_merges is None else n_merges
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    masked = d.copy()
    masked[np.tril_indices(n)] = np.inf
    trace = []
    for _ in range(n_merges):
        low = masked.min()
        # heights equal up to rounding count as ties; row-major order gives the smallest (a, b)
        flat = int(np.flatnonzero(masked <= low + TIE_RTOL * abs(low))[0])
        a, b = divmod(flat, n)
        height = masked[a, b]
        trace.append(Merge(a, b, float(height)))
        others = active.copy()
        others[[a, b]] = False
        if linkage == "average":
            new = (size[a] * d[a] + size[b] * d[b]) / (size[a] + size[b])
        elif linkage == "single":
            new = np.minimum(d[a], d[b])
        else:
            new = np.maximum(d[a], d[b])
        d[a, others] = d[others, a] = new[others]
        size[a] += size[b]
        active[b] = False
        masked[b, :] = np.inf
        masked[:, b] = np.inf
        idx = np.flatnonzero(others)
        lo, hi = np.minimum(idx, a), np.maximum(idx, a)
        masked[lo, hi] = new[idx]
    return trace


def labels_from_trace(n: int, trace) -> np.ndarray:
    """Cluster labels after applying ``trace``, renumbered by first appearance."""
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for m in trace:
        parent[find(m.b)] = find(m.a)
    roots = [find(i) for i in range(n)]
    names: dict[int, int] = {}
    return np.array([names.setdefault(r, len(names)) for r in roots], dtype=int)


def agglomerate(aff, target_k: int, linkage: str = "average") -> np.ndarray:
    n = np.asarray(aff).shape[0]
    if not 1 <= target_k <= n:
        raise ValueError(f"target_k={target_k} outside [1, {n}]")
    return labels_from_trace(n, merge_trace(aff, linkage, n_merges=n - target_k))


# ---------------------------------------------------------------------------
# label feedback
# ---------------------------------------------------------------------------

@dataclass
class PseudoLabeling:
    labels: np.ndarray
    n_clusters: int

    def __len__(self) -> int:
        return len(self.labels)


def propagate_labels(seqs, seq_labels, n_frames: int) -> PseudoLabeling:
    seq_labels = np.asarray(seq_labels, dtype=int)
    if len(seq_labels) != len(seqs):
        raise ValueError(f"{len(seq_labels)} labels for {len(seqs)} sequences")
    labels = np.full(n_frames, -1, dtype=int)
    expected = 0
    for s, lab in zip(seqs, seq_labels):
        if s.start != expected:
            raise ValueError(f"coverage gap or overlap at frame {expected}")
        labels[s.start:s.end] = lab
        expected = s.end
    if expected != n_frames:
        raise ValueError(f"sequences cover [0, {expected}) but stream has {n_frames} frames")
    n_clusters = int(seq_labels.max()) + 1 if len(seq_labels) else 0
    return PseudoLabeling(labels, n_clusters)


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------

@dataclass
class ClusterResult:
    labeling: PseudoLabeling
    em_labels: np.ndarray
    sequences: list
    seq_features: list
    affinity: np.ndarray
    seq_labels: np.ndarray
    gmm: GmmModel
    mode: str


def cluster_latents(audio, visual, target_k: int, k_em: Optional[int] = None, mode: str = "switched",
                    seed: int = 0, linkage: str = "average", em_max_iter: int = 200,
                    em_tol: float = 1e-6, em_seed: Optional[int] = None) -> ClusterResult:
    """Run sequence proposal, averaging, affinity, agglomeration and feedback on latents.

    ``audio`` and ``visual`` are (n_frames, d) arrays, already standardized if desired.
    """
    audio = np.asarray(audio, dtype=float)
    visual = np.asarray(visual, dtype=float)
    if len(audio) != len(visual):
        raise ValueError(f"{len(audio)} audio latents vs {len(visual)} visual latents")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    n = len(audio)
    k_em = 2 * target_k if k_em is None else k_em
    gmm = em_fit(audio, min(k_em, n), seed=seed if em_seed is None else em_seed,
                 max_iter=em_max_iter, tol=em_tol)
    em_labels = em_assign(gmm, audio)
    seqs = detect_sequences(em_labels)
    feats = average_sequence_features(seqs, audio, visual)
    aff = sequence_affinity(feats, mode)
    if len(seqs) == 1:
        seq_labels = np.zeros(1, dtype=int)
    else:
        k = min(target_k, len(seqs))
        if k < target_k:
            log.warning("only %d sequences for target_k=%d; keeping every sequence separate", len(seqs), target_k)
        seq_labels = agglomerate(aff, k, linkage)
    labeling = propagate_labels(seqs, seq_labels, n)
    return ClusterResult(labeling, em_labels, seqs, feats, aff, seq_labels, gmm, mode)
