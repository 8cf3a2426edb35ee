"""Pose-feature feedback: GMM reference manifold, nearest-component
selection and soft correction, with a one-way goal-proximity latch.

A pose feature is 133 channels: root + 21 joint rotations in 6D (132)
followed by the pelvis height.  A Gaussian mixture fitted over reference
features defines the manifold; each generated frame is pulled a fraction
alpha toward the Mahalanobis-nearest component mean.  Swapping the active
mixture restyles the output without touching the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import container
from .errors import SingularCovariance, TooFewSamples, UnknownStyle
from .pose import PoseState
from .rotations import renormalize_rot6d

FEATURE_DIM = 133
ROTATION_CHANNELS = 132
DEFAULT_K = 50
DEFAULT_MAX_ITER = 1000
DEFAULT_ALPHA = 0.01
INBETWEEN_ALPHA = 0.05
DEFAULT_STOP_DISTANCE = 1.0
LL_TOL = 1e-7
GMM_FORMAT = "gmm-model"
GMM_VERSION = 1


def extract_feature(pose: PoseState) -> np.ndarray:
    """(133,): root 6D, joint 6D blocks, pelvis height."""
    return np.concatenate([
        pose.root_orientation,
        pose.joint_rotations.reshape(-1),
        [pose.pelvis_translation[2]],
    ])


def write_feature(pose: PoseState, feature: np.ndarray) -> PoseState:
    """Write feature channels back into a pose; pelvis xy is untouched."""
    feature = np.asarray(feature, dtype=np.float64).reshape(FEATURE_DIM)
    translation = pose.pelvis_translation.copy()
    translation[2] = feature[ROTATION_CHANNELS]
    return PoseState(translation, feature[0:6], feature[6:ROTATION_CHANNELS].reshape(-1, 6))


def reorthonormalize_feature(feature: np.ndarray) -> np.ndarray:
    """Project the 22 6D blocks back onto the rotation manifold."""
    out = np.asarray(feature, dtype=np.float64).copy()
    blocks = out[:ROTATION_CHANNELS].reshape(-1, 6)
    out[:ROTATION_CHANNELS] = renormalize_rot6d(blocks).reshape(-1)
    return out


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D)
    cholesky: np.ndarray = field(default=None, repr=False)  # (K, D, D) lower

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if self.cholesky is None:
            try:
                self.cholesky = np.linalg.cholesky(self.covariances)
            except np.linalg.LinAlgError as e:
                raise SingularCovariance(f"covariance not SPD: {e}") from e

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mahalanobis_sq(self, f: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distance of one feature to each component."""
        f = np.asarray(f, dtype=np.float64)
        out = np.empty(self.k)
        for i in range(self.k):
            y = solve_triangular(self.cholesky[i], f - self.means[i], lower=True)
            out[i] = y @ y
        return out

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        """(N, D) -> (N, K) per-component log density including log weight."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n, d = x.shape
        out = np.empty((n, self.k))
        base = -0.5 * d * np.log(2.0 * np.pi)
        for i in range(self.k):
            L = self.cholesky[i]
            y = solve_triangular(L, (x - self.means[i]).T, lower=True)
            logdet = 2.0 * np.log(np.diag(L)).sum()
            out[:, i] = base - 0.5 * logdet - 0.5 * (y * y).sum(axis=0) + np.log(self.weights[i])
        return out

    def mean_log_likelihood(self, x: np.ndarray) -> float:
        return float(np.mean(logsumexp(self.log_pdf(x), axis=1)))

    def save(self, path, label: str = "", alpha: float = None):
        meta = {"k": self.k, "dim": self.dim, "label": label, "alpha": alpha}
        arrays = {"weights": self.weights, "means": self.means, "covariances": self.covariances}
        container.save(path, GMM_FORMAT, GMM_VERSION, meta, arrays)

    @staticmethod
    def load(path) -> tuple:
        """Returns (model, meta)."""
        _, _, meta, arrays = container.load(path, expect_format=GMM_FORMAT)
        return GmmModel(arrays["weights"], arrays["means"], arrays["covariances"]), meta


def point_mass_gmm(feature: np.ndarray, variance: float = 1.0) -> GmmModel:
    """Single-component mixture centered on one feature."""
    feature = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    d = feature.shape[1]
    return GmmModel(np.ones(1), feature, variance * np.eye(d)[None, :, :])


def nearest_component(f: np.ndarray, gmm: GmmModel) -> int:
    """Mahalanobis argmin; ties break to the lowest index."""
    return int(np.argmin(gmm.mahalanobis_sq(f)))


def correct_feature(f: np.ndarray, gmm: GmmModel, alpha: float, component: int = None) -> np.ndarray:
    """Pull the feature a fraction alpha toward the nearest component mean.

    alpha = 0 returns the input untouched (bit-identical), so disabling
    feedback and zero strength coincide exactly.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    f = np.asarray(f, dtype=np.float64)
    if alpha == 0.0:
        return f
    k = nearest_component(f, gmm) if component is None else component
    blended = f + alpha * (gmm.means[k] - f)
    return reorthonormalize_feature(blended)


def within_stop_distance(pelvis_xy, goal_avg_xy, stop_distance: float) -> bool:
    """True when the pelvis entered the goal vicinity; 0 disables stopping."""
    if stop_distance <= 0.0:
        return False
    d = np.asarray(goal_avg_xy, dtype=np.float64) - np.asarray(pelvis_xy, dtype=np.float64)
    return float(np.linalg.norm(d)) < stop_distance


class FeedbackGate:
    """One-way latch: once inside the stop distance, feedback stays off."""

    def __init__(self, stop_distance: float = DEFAULT_STOP_DISTANCE):
        self.stop_distance = float(stop_distance)
        self.active = True

    def update(self, pelvis_xy, goal_avg_xy) -> bool:
        """Latch check after the frame's correction; returns the new state."""
        if self.active and within_stop_distance(pelvis_xy, goal_avg_xy, self.stop_distance):
            self.active = False
        return self.active

    def reset(self):
        self.active = True


def apply_feedback(pose: PoseState, gmm: GmmModel, alpha: float, gate_on: bool):
    """Correct a predicted pose's rotations and pelvis height.

    Returns (pose, component index or None).  Gate off, zero alpha or no
    mixture all short-circuit to the identity, bit for bit.
    """
    if not gate_on or gmm is None or alpha == 0.0:
        return pose, None
    f = extract_feature(pose)
    k = nearest_component(f, gmm)
    corrected = correct_feature(f, gmm, alpha, component=k)
    return write_feature(pose, corrected), k


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest_sq = np.full(n, np.inf)
    for _ in range(k - 1):
        d = x - centers[-1]
        closest_sq = np.minimum(closest_sq, (d * d).sum(axis=1))
        total = closest_sq.sum()
        if total <= 0.0:
            centers.append(x[rng.integers(n)])
            continue
        centers.append(x[rng.choice(n, p=closest_sq / total)])
    return np.stack(centers)


def _ridge(cov: np.ndarray) -> np.ndarray:
    """Trace-scaled diagonal regularization."""
    d = cov.shape[0]
    eps = 1e-6 * np.trace(cov) / d
    return cov + eps * np.eye(d)


def fit_gmm(
    features: np.ndarray,
    k: int = DEFAULT_K,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
    tol: float = LL_TOL,
    covariance: str = "full",
):
    """EM fit from k-means++ seeding.

    Returns (GmmModel, log-likelihood history).  The history holds the mean
    per-sample log likelihood after each iteration; fitting stops when the
    improvement drops below tol or at max_iter.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be (N, D)")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    n, d = x.shape
    if n < k:
        raise TooFewSamples(f"{n} samples for {k} components")
    if covariance not in ("full", "diag"):
        raise ValueError("covariance must be 'full' or 'diag'")

    rng = np.random.default_rng(seed)
    means = _kmeanspp_init(x, k, rng)
    global_cov = np.cov(x, rowvar=False, bias=True).reshape(d, d)
    if covariance == "diag":
        global_cov = np.diag(np.diag(global_cov))
    covs = np.repeat(_ridge(global_cov)[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)

    history = []
    model = GmmModel(weights, means, covs)
    previous = model
    for it in range(max_iter + 1):
        log_joint = model.log_pdf(x)  # (N, K)
        log_norm = logsumexp(log_joint, axis=1)
        ll = float(np.mean(log_norm))
        if history and ll < history[-1]:
            # the ridge can nudge the last M-step downhill at convergence;
            # pure EM never decreases, so keep the better previous model
            model = previous
            break
        history.append(ll)
        if it == max_iter or (len(history) >= 2 and history[-1] - history[-2] < tol):
            break
        resp = np.exp(log_joint - log_norm[:, None])  # (N, K)

        nk = resp.sum(axis=0)  # (K,)
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        covs = np.empty((k, d, d))
        for i in range(k):
            diff = x - means[i]
            cov = (resp[:, i][:, None] * diff).T @ diff / nk[i]
            if covariance == "diag":
                cov = np.diag(np.diag(cov))
            covs[i] = _ridge(cov)
        previous = model
        model = GmmModel(weights / weights.sum(), means, covs)
    return model, history


class StyleBank:
    """Named, immutable GMMs with optional per-style alpha overrides."""

    def __init__(self):
        self._styles = {}

    def add(self, label: str, gmm: GmmModel, alpha: float = None):
        self._styles[label] = (gmm, alpha)

    def labels(self) -> list:
        return sorted(self._styles)

    def get(self, label: str):
        """Returns (gmm, alpha override or None)."""
        if label not in self._styles:
            raise UnknownStyle(f"unknown style {label!r}")
        return self._styles[label]

    @staticmethod
    def from_dir(path) -> "StyleBank":
        bank = StyleBank()
        for file in sorted(Path(path).glob("*.mfc")):
            gmm, meta = GmmModel.load(file)
            label = meta.get("label") or file.stem
            bank.add(label, gmm, meta.get("alpha"))
        return bank
