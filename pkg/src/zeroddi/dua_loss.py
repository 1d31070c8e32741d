"""Alignment and uniformity objectives, plus the ablation baselines.

The alignment term is a temperature-scaled contrastive loss over raw
dot-product similarities between each pair representation and its per-class
representations, summed over the batch (logs report the per-instance mean).
The two uniformity terms push centered class representations, and centered
pair representations, apart on the sphere around each instance's class
center: every term is 1 plus the largest cosine to a rival, so each lies in
[0, 2]. Ties inside the max route the subgradient to the first maximal
index in scan order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    Tensor,
    add,
    add_const,
    add_n,
    logsumexp_vec,
    masked_max_vec,
    masked_rowmax,
    matmul_nt,
    matvec,
    mean_all,
    mean_rows,
    mul,
    normalize_rows,
    normalize_vec,
    pick,
    relu,
    scale,
    stack_rows,
    sub,
    sum_all,
    take_row,
)


@dataclass
class BatchForward:
    """One batch: pair representations, per-instance class representations
    (a C x d_r matrix per instance), and matched class indices."""

    h: list[Tensor]
    z: list[Tensor]
    labels: list[int]

    def __post_init__(self):
        if not (len(self.h) == len(self.z) == len(self.labels)):
            raise ValueError("batch fields must have equal length")
        if not self.h:
            raise ValueError("batch must be non-empty")
        for i, (zi, y) in enumerate(zip(self.z, self.labels)):
            if not 0 <= y < zi.shape[0]:
                raise ValueError(f"instance {i}: label {y} outside {zi.shape[0]} classes")

    @property
    def size(self) -> int:
        return len(self.h)


@dataclass
class LossConfig:
    tau: float = 0.9
    lambda_: float = 0.7

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda_ < 0:
            raise ValueError("lambda must be non-negative")


def similarity_logits(batch: BatchForward, i: int) -> Tensor:
    """Raw dot products of instance i against its class representations."""
    return matvec(batch.z[i], batch.h[i])


def align_loss(batch: BatchForward, tau: float) -> Tensor:
    """Contrastive alignment, summed over the batch; shift-invariant per
    instance thanks to max-subtracted logsumexp."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    terms = []
    for i in range(batch.size):
        logits = scale(similarity_logits(batch, i), 1.0 / tau)
        terms.append(sub(logsumexp_vec(logits), pick(logits, batch.labels[i])))
    return add_n(terms)


def class_centers(z: list[Tensor]) -> list[Tensor]:
    """Per-instance mean of the class representations."""
    return [mean_rows(zi) for zi in z]


def class_uniformity_loss(z: list[Tensor], centers: list[Tensor] | None = None) -> Tensor:
    """Mean over instances and classes of 1 + max cosine between centered
    class representations; 0 when every rival sits antipodal."""
    if any(zi.shape[0] < 2 for zi in z):
        raise ValueError("class uniformity needs at least 2 classes")
    if centers is None:
        centers = class_centers(z)
    per_instance = []
    for zi, ci in zip(z, centers):
        c = zi.shape[0]
        centered = normalize_rows(sub(zi, ci))
        cosines = matmul_nt(centered, centered)
        rival = masked_rowmax(cosines, ~np.eye(c, dtype=bool))
        per_instance.append(mean_all(add_const(rival, 1.0)))
    return scale(add_n(per_instance), 1.0 / len(z))


def instance_uniformity_loss(h: Tensor, centers: Tensor) -> Tensor:
    """Mean over the batch of 1 + max cosine between this instance's
    centered pair representation and every other instance's, both centered
    at this instance's class center."""
    if h.shape != centers.shape or h.data.ndim != 2:
        raise ValueError("h and centers must be equal-shaped matrices")
    b = h.shape[0]
    if b < 2:
        raise ValueError("instance uniformity needs a batch of at least 2")
    terms = []
    for i in range(b):
        ci = take_row(centers, i)
        others = normalize_rows(sub(h, ci))
        me = normalize_vec(sub(take_row(h, i), ci))
        cosines = matvec(others, me)
        mask = np.ones(b, dtype=bool)
        mask[i] = False
        terms.append(add_const(masked_max_vec(cosines, mask), 1.0))
    return scale(add_n(terms), 1.0 / b)


def total_loss(
    batch: BatchForward,
    config: LossConfig,
    uni_parts: tuple[str, ...] = ("cla", "ins"),
) -> tuple[Tensor, dict[str, float]]:
    """Alignment plus lambda-weighted uniformity; returns the scalar and the
    component values (alignment reported as the per-instance mean).

    Both uniformity components are always evaluated (and logged) when their
    preconditions hold; with lambda = 0 they contribute exactly zero
    gradient. A singleton batch skips the instance term.
    """
    config.validate()
    align = align_loss(batch, config.tau)
    centers = class_centers(batch.z)
    if all(zi.shape[0] >= 2 for zi in batch.z):
        cla = class_uniformity_loss(batch.z, centers)
    else:
        cla = Tensor(0.0)
    if batch.size >= 2:
        ins = instance_uniformity_loss(stack_rows(batch.h), stack_rows(centers))
    else:
        ins = Tensor(0.0)
    uni_terms = []
    if "cla" in uni_parts:
        uni_terms.append(cla)
    if "ins" in uni_parts:
        uni_terms.append(ins)
    total = align
    if uni_terms:
        total = add(align, scale(add_n(uni_terms), config.lambda_))
    align_mean = align.item() / batch.size
    components = {
        "align": align_mean,
        "cla": cla.item(),
        "ins": ins.item(),
        "total": align_mean + config.lambda_ * (cla.item() + ins.item()),
    }
    return total, components


def baseline_ce_loss(batch: BatchForward, scale_factor: float = 1.0) -> Tensor:
    """Cross-entropy over dot-product logits; alignment at tau = 1/scale."""
    return align_loss(batch, tau=1.0 / scale_factor)


def baseline_hinge_loss(batch: BatchForward, margin: float) -> Tensor:
    """Per-instance mean of sum over rivals of max(0, margin - s_y + s_j)."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    terms = []
    for i in range(batch.size):
        s = similarity_logits(batch, i)
        s_y = pick(s, batch.labels[i])
        viol = relu(add_const(sub(s, s_y), margin))
        rivals = np.ones(s.shape[0])
        rivals[batch.labels[i]] = 0.0
        terms.append(sum_all(mul(viol, Tensor(rivals))))
    return scale(add_n(terms), 1.0 / batch.size)
