"""
Allocator cost
==============

Compare table probes for the naive per-cluster allocator and the cursor
allocator as the file size grows.
"""

import numpy as np

from inuksuk.sed import SedDevice
from inuksuk.vaultfs import FsImage

CLUSTERS, CLUSTER_SIZE = 131072, 8192


def fresh_image():
    need = FsImage.required_sectors(CLUSTERS, CLUSTER_SIZE, 16)
    return FsImage.format(SedDevice(need), 0, need, CLUSTERS, CLUSTER_SIZE, 16)


rng = np.random.default_rng(0)
sizes_mb = np.array([1, 5, 10, 25, 50])
rows = []
for mb in sizes_mb:
    data = rng.bytes(int(mb) * 1024 * 1024)
    probes = []
    for policy in ("naive", "cursor"):
        fs = fresh_image()
        fs.create_write("f", data, 1, policy)
        probes.append(fs.probe_counter)
    rows.append(probes)

table = np.array(rows)
# Naive cost grows with clusters needed times table size; cursor cost is linear.
print(f"{'MB':>4} {'naive':>14} {'cursor':>8} {'ratio':>8}")
for mb, (naive, cursor) in zip(sizes_mb, table):
    print(f"{mb:>4} {naive:>14,} {cursor:>8,} {naive / cursor:>8.0f}")
