"""Optimal shared-feature analysis and trained-classifier statistics.

A single feature classified against M near-orthogonal unit classifiers
under binary cross-entropy has a closed-form optimum: coordinate +1/sqrt(M)
toward every positive classifier and -1/sqrt(M) toward every negative one,
i.e. angle arccos(1/sqrt(M)) to each positive classifier. This module
provides that closed form, an independent projected-gradient oracle for
the same sphere-constrained problem, and the angle/affinity measurements
used to inspect trained checkpoints.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegenerateInputError, ValidationError


@dataclass
class AngleProblem:
    """Sphere-constrained loss-minimization instance.

    total: number of classifiers M; positives: how many of them are
    labeled present; alpha: the (constant) product of feature and
    classifier norms, i.e. the logit scale.
    """

    total: int
    positives: int
    alpha: float = 30.0

    def __post_init__(self):
        if self.total < 1:
            raise ValidationError(f"need at least one label, got {self.total}")
        if not 0 <= self.positives <= self.total:
            raise ValidationError(
                f"positives={self.positives} must lie in [0, {self.total}]"
            )
        if self.alpha <= 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")

    @property
    def signs(self) -> np.ndarray:
        """+1 for positive labels, -1 for negative ones."""
        s = np.ones(self.total)
        s[self.positives:] = -1.0
        return s


def optimal_shared_feature(problem: AngleProblem, dim: int | None = None) -> np.ndarray:
    """Closed-form optimum: +-1/sqrt(M) by label polarity, zero-padded to dim."""
    m = problem.total
    x = problem.signs / math.sqrt(m)
    if dim is not None:
        if dim < m:
            raise ValidationError(f"dim={dim} smaller than label count {m}")
        x = np.concatenate([x, np.zeros(dim - m)])
    return x


def optimal_angle_degrees(m: int) -> float:
    """Angle of the optimal shared feature to each positive classifier."""
    if m < 1:
        raise ValidationError(f"need at least one label, got {m}")
    return math.degrees(math.acos(1.0 / math.sqrt(m)))


def log_objective(x, problem: AngleProblem) -> float:
    """log of prod(1+exp(-alpha*x_j)) over positives times the negative mirror.

    Evaluated as a sum of log(1+exp(.)) terms so alpha=30 cannot overflow.
    """
    t = problem.alpha * problem.signs * np.asarray(x, dtype=np.float64)
    return float(np.sum(np.logaddexp(0.0, -t)))


def _log_objective_grad(x, problem: AngleProblem) -> np.ndarray:
    t = problem.alpha * problem.signs * x
    # d/dx log(1+exp(-a s x)) = -a s sigmoid(-a s x)
    return -problem.alpha * problem.signs / (1.0 + np.exp(t))


def _descend(x0, problem, max_iters):
    """Projected gradient descent on the unit sphere with backtracking.

    The step grows on accepted moves and halves on rejected ones; growth is
    essential because at large alpha the basin around the optimum is
    exponentially flat and a fixed step stalls far from it.
    """
    x = x0 / np.linalg.norm(x0)
    fx = log_objective(x, problem)
    step = 0.1
    rejects = 0
    iters = 0
    for iters in range(1, max_iters + 1):
        grad = _log_objective_grad(x, problem)
        pgrad = grad - (grad @ x) * x
        pnorm = float(np.linalg.norm(pgrad))
        if pnorm == 0.0:
            break
        cand = x - step * pgrad
        nrm = np.linalg.norm(cand)
        if nrm == 0.0:
            step *= 0.5
            continue
        cand = cand / nrm
        fc = log_objective(cand, problem)
        if fc < fx:
            x, fx = cand, fc
            step = min(step * 1.5, 1e30)
            rejects = 0
        else:
            step *= 0.5
            rejects += 1
            if rejects > 64:
                break
    grad = _log_objective_grad(x, problem)
    pgrad = grad - (grad @ x) * x
    return x, fx, float(np.linalg.norm(pgrad)), iters


def numeric_optimum(
    problem: AngleProblem,
    restarts: int = 8,
    seed: int = 0,
    max_iters: int = 10000,
    grad_tol: float = 1e-6,
):
    """Best sphere-constrained minimizer over random restarts.

    Returns (x, log-objective value). Raises ConvergenceError if even the
    best restart ends with a projected gradient norm above ``grad_tol``.
    """
    rng = np.random.default_rng(seed)
    m = problem.total
    if m == 1:
        starts = [np.array([1.0]), np.array([-1.0])]
    else:
        starts = [rng.standard_normal(m) for _ in range(restarts)]
    best = None
    for x0 in starts:
        x, fx, pnorm, iters = _descend(x0, problem, max_iters)
        if best is None or fx < best[1]:
            best = (x, fx, pnorm, iters)
    x, fx, pnorm, iters = best
    if pnorm > grad_tol:
        raise ConvergenceError(
            f"projected gradient norm {pnorm:.3e} > {grad_tol:.1e} after {iters} "
            f"iterations (M={problem.total}, positives={problem.positives}, "
            f"alpha={problem.alpha})"
        )
    return x, fx


def numeric_angle_degrees(m: int, alpha: float = 30.0, restarts: int = 8, seed: int = 0) -> float:
    """Angle to a positive classifier recovered by the numeric oracle.

    Solves the all-positive instance; the angle to classifier e_j is
    arccos(x_j), averaged over coordinates for symmetry.
    """
    problem = AngleProblem(total=m, positives=m, alpha=alpha)
    x, _ = numeric_optimum(problem, restarts=restarts, seed=seed)
    return math.degrees(math.acos(float(np.clip(x.mean(), -1.0, 1.0))))


def vector_angle_degrees(u, v) -> float:
    """Angle between two vectors in degrees, clamped into [0, 180]."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("angle with a zero vector is undefined")
    c = np.clip(u @ v / (nu * nv), -1.0, 1.0)
    return math.degrees(math.acos(float(c)))


@dataclass
class ClassifierStats:
    """Gram matrix of normalized classifier columns plus raw column norms."""

    affinity: np.ndarray
    norms: np.ndarray


def classifier_stats(weights) -> ClassifierStats:
    """Affinity (cosine) matrix and per-column norms of a C-by-M weight matrix."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValidationError(f"classifier weights must be 2-D, got shape {w.shape}")
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms == 0.0):
        raise DegenerateInputError("classifier matrix has a zero column")
    unit = w / norms
    return ClassifierStats(affinity=unit.T @ unit, norms=norms)


@dataclass
class AngleReport:
    """Per-label feature-to-classifier angle distributions on a dataset."""

    positive: dict = field(default_factory=dict)  # label -> array of degrees
    negative: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    optimal_shared_deg: float = 0.0

    def median_positive(self) -> float:
        return float(np.median(np.concatenate([v[:, 1] for v in self.positive.values()])))

    def median_negative(self) -> float:
        return float(np.median(np.concatenate([v[:, 1] for v in self.negative.values()])))

    def label_medians(self) -> dict:
        return {
            j: (float(np.median(self.positive[j][:, 1])), float(np.median(self.negative[j][:, 1])))
            for j in self.positive
        }

    def rows(self):
        """Flat (label_index, sample_index, polarity, angle_deg) rows."""
        out = []
        for j in sorted(self.positive):
            for idx, ang in self.positive[j]:
                out.append((j, int(idx), "positive", float(ang)))
        for j in sorted(self.negative):
            for idx, ang in self.negative[j]:
                out.append((j, int(idx), "negative", float(ang)))
        return out


def analyze_angles(model, samples) -> AngleReport:
    """Split feature/classifier angles by ground-truth polarity per label.

    Works on any model exposing ``label_feature_vectors`` (per-label
    features and per-label classifier columns). Labels whose positive or
    negative sample set is empty are skipped with a warning.
    """
    m = model.cfg.M
    per_label_pos = {j: [] for j in range(m)}
    per_label_neg = {j: [] for j in range(m)}
    for idx, sample in enumerate(samples):
        feats, cls = model.label_feature_vectors(sample.image)
        for j in range(m):
            ang = vector_angle_degrees(feats[:, j], cls[:, j])
            if sample.y[j] == 1:
                per_label_pos[j].append((idx, ang))
            else:
                per_label_neg[j].append((idx, ang))
    report = AngleReport(optimal_shared_deg=optimal_angle_degrees(m))
    for j in range(m):
        if not per_label_pos[j] or not per_label_neg[j]:
            warnings.warn(f"label {j} lacks positive or negative samples; skipped", stacklevel=2)
            report.skipped.append(j)
            continue
        report.positive[j] = np.array(per_label_pos[j])
        report.negative[j] = np.array(per_label_neg[j])
    return report
