"""Composite contrastive objective: instance discrimination between two
radar views, plus alignment of radar prototypes to frozen teacher
embeddings.

Notation: a batch holds unit embeddings ``z`` (first view), ``z_prime``
(second view) and optionally ``z_vision`` (teacher).  Similarity is the
temperature-scaled dot product ``sim(x, y) = x.y / tau``.  The per-sample
view loss is the softmax cross-entropy of the positive against in-batch
candidates:

    l_i = -log( exp(sim(z_i, z'_i)) / sum_j exp(sim(z_i, z'_j)) )

with the positive included once in the denominator.  The intra term
averages both directions over the batch; the cross term scores the
(unnormalized) prototype ``(z_i + z'_i)/2`` against the teacher
embeddings, one-directional by default.  The composite objective is
``intra + lambda_cross * cross``.

All log-sum-exp evaluations subtract the row maximum, so similarities up
to +-500 stay finite.  Gradients are analytic; teacher embeddings are
constants and receive none.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ContrastiveConfig",
    "EmbeddingBatch",
    "LossGradients",
    "sim",
    "intra_pair_loss",
    "intra_loss",
    "prototype",
    "cross_loss",
    "composite_loss",
    "loss_gradients",
]

_VARIANTS = ("cross_view", "same_view")


@dataclass(frozen=True)
class ContrastiveConfig:
    """Loss hyper-parameters.

    ``negatives_variant`` selects the in-batch negatives of the intra
    term: ``cross_view`` scores the anchor against the other view's
    embeddings (default); ``same_view`` scores it against its own view's
    other samples, keeping the positive from the other view.
    """

    temperature: float = 0.1
    lambda_cross: float = 1.0
    symmetric_cross: bool = False
    negatives_variant: str = "cross_view"

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.lambda_cross < 0:
            raise ValueError("lambda_cross must be >= 0")
        if self.negatives_variant not in _VARIANTS:
            raise ValueError(f"negatives_variant must be one of {_VARIANTS}")


def _rows(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (batch, embed_dim)")
    return arr


@dataclass(frozen=True)
class EmbeddingBatch:
    """Row-per-sample embedding matrices; views are index-aligned."""

    z: np.ndarray
    z_prime: np.ndarray
    z_vision: np.ndarray | None = None

    def __post_init__(self) -> None:
        z = _rows(self.z, "z")
        zp = _rows(self.z_prime, "z_prime")
        if z.shape != zp.shape or z.shape[0] < 1:
            raise ValueError("z and z_prime must share shape with batch >= 1")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "z_prime", zp)
        if self.z_vision is not None:
            zv = _rows(self.z_vision, "z_vision")
            if zv.shape != z.shape:
                raise ValueError("z_vision must share shape with z")
            object.__setattr__(self, "z_vision", zv)

    @property
    def batch_size(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class LossGradients:
    """Gradients w.r.t. the two radar view matrices.  Teacher embeddings
    are frozen constants and deliberately have no gradient slot."""

    z: np.ndarray
    z_prime: np.ndarray


def sim(x: np.ndarray, y: np.ndarray, temperature: float) -> float:
    """Temperature-scaled dot product."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    return float(np.dot(np.asarray(x, dtype=np.float64),
                        np.asarray(y, dtype=np.float64)) / temperature)


def _logsumexp_rows(s: np.ndarray) -> np.ndarray:
    m = s.max(axis=1)
    return m + np.log(np.exp(s - m[:, None]).sum(axis=1))


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _pair_logits(anchors: np.ndarray, positives: np.ndarray,
                 temperature: float, variant: str) -> np.ndarray:
    """Per-anchor candidate logits; column i holds the positive for row i."""
    if variant == "cross_view":
        return anchors @ positives.T / temperature
    # same_view: positive stays cross-view, negatives come from the
    # anchor's own view
    s = anchors @ anchors.T / temperature
    np.fill_diagonal(s, np.einsum("ij,ij->i", anchors, positives) / temperature)
    return s


def intra_pair_loss(batch: EmbeddingBatch, i: int, direction: str = "forward",
                    temperature: float = 0.1,
                    variant: str = "cross_view") -> float:
    """Per-sample view-discrimination loss.

    ``direction="forward"`` anchors on ``z[i]`` against the ``z_prime``
    candidates; ``"reverse"`` swaps the roles.
    """
    if direction not in ("forward", "reverse"):
        raise ValueError("direction must be 'forward' or 'reverse'")
    if variant not in _VARIANTS:
        raise ValueError(f"variant must be one of {_VARIANTS}")
    b = batch.batch_size
    if not 0 <= i < b:
        raise IndexError(f"sample index {i} out of range [0, {b})")
    anchors, positives = ((batch.z, batch.z_prime) if direction == "forward"
                          else (batch.z_prime, batch.z))
    s = _pair_logits(anchors, positives, temperature, variant)
    return float(_logsumexp_rows(s[i:i + 1])[0] - s[i, i])


def intra_loss(batch: EmbeddingBatch, temperature: float = 0.1,
               variant: str = "cross_view") -> float:
    """Symmetric average of both view directions over the batch."""
    if variant not in _VARIANTS:
        raise ValueError(f"variant must be one of {_VARIANTS}")
    sa = _pair_logits(batch.z, batch.z_prime, temperature, variant)
    sb = _pair_logits(batch.z_prime, batch.z, temperature, variant)
    la = _logsumexp_rows(sa) - np.diag(sa)
    lb = _logsumexp_rows(sb) - np.diag(sb)
    return float(np.mean(la + lb) / 2.0)


def prototype(z: np.ndarray, z_prime: np.ndarray) -> np.ndarray:
    """Elementwise mean of the two view embeddings; not re-normalized."""
    z = np.asarray(z, dtype=np.float64)
    zp = np.asarray(z_prime, dtype=np.float64)
    if z.shape != zp.shape:
        raise ValueError("prototype requires same-shape inputs")
    return (z + zp) / 2.0


def cross_loss(batch: EmbeddingBatch, temperature: float = 0.1,
               symmetric_cross: bool = False) -> float:
    """Prototype-to-teacher alignment loss.

    One-directional by default (prototypes anchor against the batch of
    teacher embeddings); the symmetric form averages in the
    teacher-anchored direction as well.
    """
    if batch.z_vision is None:
        raise ValueError("cross_loss requires vision embeddings")
    zbar = prototype(batch.z, batch.z_prime)
    v = batch.z_vision
    s = zbar @ v.T / temperature
    l_rv = _logsumexp_rows(s) - np.diag(s)
    if not symmetric_cross:
        return float(np.mean(l_rv))
    t = s.T  # v anchors against prototypes
    l_vr = _logsumexp_rows(t) - np.diag(t)
    return float(np.mean(l_rv + l_vr) / 2.0)


def composite_loss(batch: EmbeddingBatch, config: ContrastiveConfig) -> float:
    """``intra + lambda_cross * cross``; the cross term is skipped
    entirely when ``lambda_cross == 0``."""
    total = intra_loss(batch, config.temperature, config.negatives_variant)
    if config.lambda_cross != 0.0:
        total = total + config.lambda_cross * cross_loss(
            batch, config.temperature, config.symmetric_cross)
    return float(total)


def _intra_grads(batch: EmbeddingBatch, temperature: float,
                 variant: str) -> tuple[np.ndarray, np.ndarray]:
    b = batch.batch_size
    z, zp = batch.z, batch.z_prime
    coeff = 1.0 / (2.0 * b * temperature)
    dz = np.zeros_like(z)
    dzp = np.zeros_like(zp)

    if variant == "cross_view":
        for anchors, positives, da, dp in ((z, zp, dz, dzp), (zp, z, dzp, dz)):
            s = anchors @ positives.T / temperature
            r = _softmax_rows(s)
            r_minus = r - np.eye(b)
            da += coeff * (r_minus @ positives)
            dp += coeff * (r_minus.T @ anchors)
        return dz, dzp

    # same_view: anchor row i sees positive (i-th other-view) on the
    # diagonal and its own view's rows elsewhere
    for anchors, positives, da, dp in ((z, zp, dz, dzp), (zp, z, dzp, dz)):
        s = _pair_logits(anchors, positives, temperature, "same_view")
        r = _softmax_rows(s)
        w_pos = np.diag(r)                       # weight on the positive
        off = r - np.diag(np.diag(r))            # weights on same-view negatives
        # positive term: d/d anchor_i += (w_pos - 1) positive_i, d/d pos_i too
        da += coeff * ((w_pos - 1.0)[:, None] * positives)
        dp += coeff * ((w_pos - 1.0)[:, None] * anchors)
        # negative logits s_ij = anchor_i . anchor_j (j != i)
        da += coeff * (off @ anchors + off.T @ anchors)
    return dz, dzp


def _cross_grads(batch: EmbeddingBatch, temperature: float,
                 symmetric_cross: bool) -> tuple[np.ndarray, np.ndarray]:
    b = batch.batch_size
    zbar = prototype(batch.z, batch.z_prime)
    v = batch.z_vision
    s = zbar @ v.T / temperature
    r = _softmax_rows(s)
    eye = np.eye(b)
    if symmetric_cross:
        rv = _softmax_rows(s.T)
        dzbar = ((r - eye) @ v + (rv - eye).T @ v) / (2.0 * b * temperature)
    else:
        dzbar = (r - eye) @ v / (b * temperature)
    half = dzbar / 2.0  # prototype averages the two views
    return half, half.copy()


def loss_gradients(batch: EmbeddingBatch, config: ContrastiveConfig) -> LossGradients:
    """Analytic gradients of :func:`composite_loss` w.r.t. z and z_prime."""
    dz, dzp = _intra_grads(batch, config.temperature, config.negatives_variant)
    if config.lambda_cross != 0.0:
        if batch.z_vision is None:
            raise ValueError("lambda_cross > 0 requires vision embeddings")
        cz, czp = _cross_grads(batch, config.temperature, config.symmetric_cross)
        dz = dz + config.lambda_cross * cz
        dzp = dzp + config.lambda_cross * czp
    return LossGradients(z=dz, z_prime=dzp)
