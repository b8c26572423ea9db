"""Activation algebra and the two SVD primitives the learner is built from.

Everything here is a pure function over immutable values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DomainError, ShapeError

_EPS = np.finfo(np.float64).eps


class ActivationKind(str, enum.Enum):
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class ActivationSpec:
    """Output-neuron nonlinearity.

    ``epsilon_clip`` bounds the range of targets accepted by the inverse so
    that the logit stays finite: valid targets lie in
    ``[epsilon_clip, 1 - epsilon_clip]``.
    """

    kind: ActivationKind = ActivationKind.LOGISTIC
    epsilon_clip: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "kind", ActivationKind(self.kind))
        if not 0.0 < self.epsilon_clip < 0.5:
            raise ArgumentError(f"epsilon_clip must lie in (0, 0.5), got {self.epsilon_clip}")


LOGISTIC = ActivationSpec()


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        bad = a[~np.isfinite(a)].flat[0]
        raise DomainError(f"{what} contains a non-finite value: {bad!r}")


def act_forward(z, act: ActivationSpec = LOGISTIC) -> np.ndarray:
    """Apply the activation elementwise."""
    z = np.asarray(z, dtype=np.float64)
    if act.kind is ActivationKind.LOGISTIC:
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    raise ArgumentError(f"unsupported activation {act.kind}")


def act_inverse(targets, act: ActivationSpec = LOGISTIC) -> np.ndarray:
    """Elementwise inverse of the activation, i.e. the pre-activation targets.

    Raises
    ------
    DomainError
        If any target lies outside ``[epsilon_clip, 1 - epsilon_clip]``.
    """
    d = np.asarray(targets, dtype=np.float64)
    lo, hi = act.epsilon_clip, 1.0 - act.epsilon_clip
    outside = ~((d >= lo) & (d <= hi))
    if np.any(outside):
        bad = d[outside].flat[0]
        raise DomainError(f"target {bad!r} outside valid range [{lo}, {hi}]")
    if act.kind is ActivationKind.LOGISTIC:
        return np.log(d) - np.log1p(-d)
    raise ArgumentError(f"unsupported activation {act.kind}")


def act_derivative_at(dbar, act: ActivationSpec = LOGISTIC) -> np.ndarray:
    """Derivative of the forward activation evaluated at ``dbar``."""
    z = np.asarray(dbar, dtype=np.float64)
    _require_finite(z, "pre-activation input")
    if act.kind is ActivationKind.LOGISTIC:
        y = act_forward(z, act)
        return y * (1.0 - y)
    raise ArgumentError(f"unsupported activation {act.kind}")


@dataclass(frozen=True, eq=False)
class SvdFactors:
    """Left singular vectors ``u`` (features x rank) and singular values ``s``.

    Right singular vectors are never kept.
    """

    u: np.ndarray
    s: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.u.shape[0])

    @property
    def us(self) -> np.ndarray:
        """``u @ diag(s)``, the product a client transmits."""
        return self.u * self.s

    @classmethod
    def empty(cls, num_features: int) -> "SvdFactors":
        return cls(np.zeros((num_features, 0)), np.zeros(0))


def truncation_threshold(shape: tuple[int, int], sigma_max: float) -> float:
    return max(shape) * _EPS * sigma_max


def economy_svd(a) -> SvdFactors:
    """Economy-size SVD of ``a`` with numerical-rank truncation.

    Singular values not exceeding ``max(a.shape) * eps * sigma_max`` are
    dropped together with their columns of ``u``. For wide inputs the
    factorization goes through an R factor of ``a.T`` so the right singular
    vectors are never formed.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    if a.size == 0:
        raise ArgumentError(f"cannot factor an empty matrix of shape {a.shape}")
    _require_finite(a, "matrix")

    rows, cols = a.shape
    if cols > rows:
        r = np.linalg.qr(a.T, mode="r")
        u, s, _ = np.linalg.svd(r.T, full_matrices=False)
    else:
        u, s, _ = np.linalg.svd(a, full_matrices=False)

    if s.size == 0 or s[0] == 0.0:
        return SvdFactors.empty(rows)
    keep = int(np.count_nonzero(s > truncation_threshold(a.shape, s[0])))
    return SvdFactors(np.ascontiguousarray(u[:, :keep]), s[:keep].copy())


def merge_svd(left: SvdFactors, right: SvdFactors) -> SvdFactors:
    """Factors of ``[A1 | A2]`` given factors of ``A1`` and ``A2``.

    Only ``u * s`` of each side is needed; the right singular vectors
    cancel out of the left Gram matrix.
    """
    if left.num_features != right.num_features:
        raise ShapeError(
            f"cannot merge factors with {left.num_features} and {right.num_features} rows"
        )
    if right.rank == 0:
        return left
    if left.rank == 0:
        return right
    return merge_products(left.us, right.us)


def merge_products(left_us: np.ndarray, right_us: np.ndarray) -> SvdFactors:
    """Like :func:`merge_svd` but taking the ``u * s`` products directly."""
    if left_us.shape[0] != right_us.shape[0]:
        raise ShapeError(
            f"cannot merge products with {left_us.shape[0]} and {right_us.shape[0]} rows"
        )
    stacked = np.hstack([left_us, right_us])
    if stacked.shape[1] == 0:
        return SvdFactors.empty(stacked.shape[0])
    return economy_svd(stacked)
