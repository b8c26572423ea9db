"""Client fit, coordinator aggregation, weight solve and inference.

A client reduces its local block ``X_p`` (bias row included) to, per output
neuron, the product ``U_p S_p`` of the economy SVD of ``X_p F_p`` and the
vector ``m_p = X_p F_p F_p dbar_p``. The coordinator concatenates and
re-factors the products and sums the vectors; the global weights then follow
in closed form. Because both reductions are exact, any horizontal partition
of the data yields the weights of the centralized fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, ShapeError
from .numeric import (
    LOGISTIC,
    ActivationSpec,
    SvdFactors,
    act_derivative_at,
    act_forward,
    act_inverse,
    economy_svd,
    merge_products,
    truncation_threshold,
)


@dataclass(frozen=True, eq=False)
class OutputUpdate:
    us: np.ndarray
    m_vec: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.us.shape[1])


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    """Everything a client sends: one ``(us, m_vec)`` pair per output neuron.

    ``sample_count`` is diagnostic and is not transmitted on the wire.
    """

    per_output: tuple[OutputUpdate, ...]
    sample_count: int | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "per_output", tuple(self.per_output))
        if not self.per_output:
            raise ArgumentError("a client update needs at least one output")
        rows = {o.us.shape[0] for o in self.per_output} | {o.m_vec.shape[0] for o in self.per_output}
        if len(rows) != 1:
            raise ShapeError(f"inconsistent feature counts across outputs: {sorted(rows)}")

    @property
    def num_classes(self) -> int:
        return len(self.per_output)

    @property
    def num_features(self) -> int:
        return int(self.per_output[0].m_vec.shape[0])


@dataclass(frozen=True, eq=False)
class AggregateOutput:
    us: np.ndarray
    m_vec: np.ndarray
    # factors of ``us`` when they were produced by a merge; saves a re-factorization at solve time
    factors: SvdFactors | None = None

    def svd(self) -> SvdFactors:
        if self.factors is not None:
            return self.factors
        if self.us.shape[1] == 0:
            return SvdFactors.empty(self.us.shape[0])
        return economy_svd(self.us)


@dataclass(frozen=True, eq=False)
class AggregateState:
    per_output: tuple[AggregateOutput, ...] = ()
    clients_incorporated: int = 0

    @property
    def is_empty(self) -> bool:
        return self.clients_incorporated == 0

    @property
    def num_classes(self) -> int:
        return len(self.per_output)

    @property
    def num_features(self) -> int:
        return int(self.per_output[0].m_vec.shape[0])

    def as_update(self) -> ClientUpdate:
        """Repackage the aggregate so it can be forwarded as a single update."""
        if self.is_empty:
            raise ArgumentError("cannot repackage an empty aggregate")
        return ClientUpdate(tuple(OutputUpdate(o.us, o.m_vec) for o in self.per_output))


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """Weight matrix with one column per output neuron; row 0 holds the biases."""

    w: np.ndarray
    activation: ActivationSpec = LOGISTIC
    lambda_used: float = 0.0

    @property
    def num_features_with_bias(self) -> int:
        return int(self.w.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.w.shape[1])


def add_bias(features) -> np.ndarray:
    """Prepend a row of ones to a (features x samples) matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected features x samples matrix, got shape {x.shape}")
    return np.vstack([np.ones((1, x.shape[1])), x])


def fit_client(x, targets, act: ActivationSpec = LOGISTIC) -> ClientUpdate:
    """Reduce one local data block to its transmissible factors.

    Parameters
    ----------
    x : (m, n_p) array
        Local inputs with the bias row already prepended.
    targets : (n_p, c) array
        Desired outputs, encoded inside the activation's valid range.
    """
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(targets, dtype=np.float64)
    if d.ndim == 1:
        d = d[:, None]
    if x.ndim != 2 or x.shape[1] == 0:
        raise ArgumentError(f"client needs at least one sample, got input shape {x.shape}")
    if d.shape[0] != x.shape[1]:
        raise ShapeError(f"{x.shape[1]} samples but {d.shape[0]} target rows")

    dbar = act_inverse(d, act)
    fp = act_derivative_at(dbar, act)

    outputs = []
    seen: list[tuple[np.ndarray, np.ndarray]] = []
    for k in range(d.shape[1]):
        f_k = fp[:, k]
        # outputs frequently share the same derivative vector (one-hot targets
        # give identical f' for high and low codes); reuse their factorization
        us = next((u for f, u in seen if np.array_equal(f, f_k)), None)
        if us is None:
            us = economy_svd(x * f_k).us
            seen.append((f_k, us))
        m_vec = x @ (f_k * f_k * dbar[:, k])
        outputs.append(OutputUpdate(us, m_vec))
    return ClientUpdate(tuple(outputs), sample_count=int(x.shape[1]))


def incorporate(state: AggregateState, update: ClientUpdate) -> AggregateState:
    """Fold one client update into the running aggregate.

    An empty state is seeded with the update as-is. Otherwise the m-vectors
    are summed and the ``us`` products are merged by re-factoring their
    concatenation.
    """
    if state.is_empty:
        seeded = tuple(AggregateOutput(o.us, o.m_vec) for o in update.per_output)
        return AggregateState(seeded, 1)

    if update.num_classes != state.num_classes:
        raise ShapeError(
            f"update has {update.num_classes} outputs, aggregate has {state.num_classes}"
        )
    merged = []
    for k, (agg, new) in enumerate(zip(state.per_output, update.per_output)):
        if new.us.shape[0] != agg.us.shape[0]:
            raise ShapeError(
                f"output {k}: update has {new.us.shape[0]} feature rows, "
                f"aggregate has {agg.us.shape[0]}"
            )
        factors = merge_products(new.us, agg.us)
        merged.append(AggregateOutput(factors.us, agg.m_vec + new.m_vec, factors))
    return AggregateState(tuple(merged), state.clients_incorporated + 1)


def aggregate(updates: Iterable[ClientUpdate], state: AggregateState | None = None) -> AggregateState:
    state = AggregateState() if state is None else state
    for update in updates:
        state = incorporate(state, update)
    return state


def solve_weights(
    state: AggregateState, lam: float, act: ActivationSpec = LOGISTIC
) -> ModelWeights:
    """Closed-form weights ``U (S^2 + lam I)^-1 U^T m`` for every output.

    With ``lam == 0`` singular values at or below the numerical-rank
    threshold are skipped, giving minimum-norm least squares weights.
    """
    if lam < 0 or not np.isfinite(lam):
        raise ArgumentError(f"lambda must be a finite non-negative number, got {lam}")
    if state.is_empty:
        raise ArgumentError("cannot solve weights from an empty aggregate")

    cols = []
    for out in state.per_output:
        f = out.svd()
        u, s = f.u, f.s
        if lam == 0 and f.rank:
            keep = s > truncation_threshold(out.us.shape, s[0])
            u, s = u[:, keep], s[keep]
        coef = (u.T @ out.m_vec) / (s * s + lam)
        cols.append(u @ coef)
    return ModelWeights(np.column_stack(cols), act, float(lam))


def fit_centralized(x, targets, lam: float, act: ActivationSpec = LOGISTIC) -> ModelWeights:
    """Single-client fit of the whole dataset."""
    return solve_weights(incorporate(AggregateState(), fit_client(x, targets, act)), lam, act)


def predict(x, weights: ModelWeights) -> np.ndarray:
    """Network outputs for a (features x n) matrix given without the bias row.

    Returns an (n x num_classes) array.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != weights.num_features_with_bias - 1:
        raise ShapeError(
            f"model expects {weights.num_features_with_bias - 1} features, "
            f"got input of shape {x.shape}"
        )
    z = x.T @ weights.w[1:] + weights.w[0]
    return act_forward(z, weights.activation)


def classify(x, weights: ModelWeights, classes: Sequence) -> np.ndarray:
    """Label of the strongest output per sample; ties go to the lowest index."""
    classes = np.asarray(classes)
    if classes.shape[0] != weights.num_classes:
        raise ShapeError(f"{classes.shape[0]} class labels for {weights.num_classes} outputs")
    return classes[np.argmax(predict(x, weights), axis=1)]
