"""Parameter census of a fitted model and an analytic CNN reference count.

Counting convention for our model:

* Saab bank: ``d * K`` AC filter coefficients plus 1 bias. The DC anchor is
  analytic (``1/sqrt(d)``) and the reconstruction mean is not used by the
  forward pass, so neither is counted.
* Tree ensembles: one parameter per node (a split stores a feature index and
  a threshold, a leaf a value; both are counted once), plus the base scores.

Reference: a small 3D U-Net with 2 input channels, base width 16 doubling
per level, 4 down-sampling stages (widths 16-32-64-128-256), two 3x3x3
convolutions (with bias) per level on both paths, 2x2x2 transposed
convolutions for up-sampling, skip concatenation and a 1x1x1 output
convolution to 1 channel. Normalisation layers are omitted.
"""
from __future__ import annotations

from dataclasses import dataclass

from .data.container import ModelContainer


def conv3d(cin: int, cout: int, k: int) -> int:
    return k ** 3 * cin * cout + cout


def unet3d_reference(in_channels: int = 2, base: int = 16, depth: int = 4, out_channels: int = 1) -> int:
    widths = [base * 2 ** i for i in range(depth + 1)]
    total, cin = 0, in_channels
    for w in widths:
        total += conv3d(cin, w, 3) + conv3d(w, w, 3)
        cin = w
    for w in reversed(widths[:-1]):
        total += conv3d(cin, w, 2)              # transposed conv, same count
        total += conv3d(2 * w, w, 3) + conv3d(w, w, 3)
        cin = w
    return total + conv3d(cin, out_channels, 1)


@dataclass(frozen=True)
class Census:
    saab: int
    seg_trees: int
    cls_trees: int
    reference: int

    @property
    def total(self) -> int:
        return self.saab + self.seg_trees + self.cls_trees

    @property
    def ratio(self) -> float:
        return self.total / self.reference

    def rows(self) -> list[list]:
        return [["saab_coefficients", self.saab], ["seg_tree_nodes", self.seg_trees],
                ["cls_tree_nodes", self.cls_trees], ["total", self.total],
                ["reference_unet3d", self.reference], ["ratio", format(self.ratio, ".6f")]]


def census(container: ModelContainer) -> Census:
    saab = sum(b.dim * b.n_ac + 1 for hop in container.encoder.hops for b in hop.banks)
    seg = 0
    if container.seg is not None:
        ens = [container.seg.initial, *container.seg.residual.values()]
        seg = sum(e.n_nodes + e.base_score.size for e in ens)
    cls = 0
    if container.cls is not None:
        e = container.cls.ensemble
        cls = e.n_nodes + e.base_score.size
    return Census(saab, seg, cls, unet3d_reference())
