"""Standardizing interaction tables for cross-pair comparison and heatmap
export.

Run: python demos/05_pci_reporting.py
"""

import tempfile
from pathlib import Path

import numpy as np

from effectlab import (
    TeacherSpec,
    build_space,
    gen_teacher,
    pci_matrix,
    pci_rank_pairs,
    write_pci_csv,
)

space = build_space([
    ("optimizer", ["adam", "sgd"]),
    ("learning_rate", ["low", "mid", "high"]),
    ("batch_size", ["64", "256"]),
])
table = gen_teacher(TeacherSpec(space, pair_scale=0.4, residual_scale=0.0,
                                noise=0.0, seed=11)).truth

print("pairs ranked by interaction strength (RMS of the raw table):")
for (a, b), s in pci_rank_pairs(table):
    print(f"  {a} x {b}: s = {s:.4f}")

j, k = 1, 2  # learning_rate x batch_size
pm = pci_matrix(table, j, k)
print(f"\nstandardized {space.names[j]} x {space.names[k]} matrix "
      f"(s = {pm.s:.4f}, mode = {pm.mode}):")
print(np.array_str(pm.values, precision=3, suppress_small=True))

# Standardization fixes the energy to the cell count and bounds the peak.
Lj, Lk = pm.values.shape
print(f"energy sum(PCI^2) = {float((pm.values ** 2).sum()):.3f} = {Lj * Lk}")
print(f"peak |PCI| = {float(np.abs(pm.values).max()):.3f} "
      f"(always in [1, sqrt({Lj * Lk})])")

# The index is scale-free: doubling all responses changes nothing.
import dataclasses
doubled = dataclasses.replace(table, pairs={p: 2 * m for p, m in table.pairs.items()})
assert np.allclose(pci_matrix(doubled, j, k).values, pm.values)
print("affine invariance: doubling responses leaves the index unchanged")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "pci.csv"
    write_pci_csv(table, path, header_note="dimensionless; estimator=truth")
    print(f"\nlong-form heatmap rows written: {len(path.read_text().splitlines()) - 2}")
