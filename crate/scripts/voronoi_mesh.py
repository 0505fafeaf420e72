"""Clipped, Lloyd-relaxed Voronoi meshes in nvem-mesh format.

usage:
    python3 scripts/voronoi_mesh.py square N SEED OUT
        unit square; tags bottom 1, right 2, top 3, left 4
    python3 scripts/voronoi_mesh.py punch N SEED OUT
        [0, 1000] x [0, 500] half block under a punch of half-width 250;
        tags bottom 1, right 2, free top 3, left 4, punch footprint 5
"""
import sys

import numpy as np
from scipy.spatial import Voronoi


def cells(seeds, width, height):
    mirrored = [seeds]
    for axis, value in [(0, 0.0), (0, width), (1, 0.0), (1, height)]:
        m = seeds.copy()
        m[:, axis] = 2.0 * value - m[:, axis]
        mirrored.append(m)
    vor = Voronoi(np.vstack(mirrored))
    lo, hi = np.zeros(2), np.array([width, height])
    out = []
    for i in range(len(seeds)):
        region = vor.regions[vor.point_region[i]]
        out.append(np.clip(vor.vertices[region], lo, hi))
    return out


def area_centroid(poly):
    x, y = poly[:, 0], poly[:, 1]
    xs, ys = np.roll(x, -1), np.roll(y, -1)
    cross = x * ys - xs * y
    a = 0.5 * cross.sum()
    cx = ((x + xs) * cross).sum() / (6.0 * a)
    cy = ((y + ys) * cross).sum() / (6.0 * a)
    return a, np.array([cx, cy])


def build(kind, n, seed):
    rng = np.random.default_rng(seed)
    if kind == "square":
        width, height, pinned = 1.0, 1.0, np.zeros((0, 2))
    elif kind == "punch":
        width, height = 1000.0, 500.0
        h = np.sqrt(width * height / n)
        # a mirrored pair puts a vertex exactly at the footprint end (250, 500)
        pinned = np.array([[250.0 - 0.5 * h, height - 0.5 * h], [250.0 + 0.5 * h, height - 0.5 * h]])
    else:
        raise SystemExit(f"unknown mesh kind {kind}")
    free = rng.uniform(0.02, 0.98, size=(n - len(pinned), 2)) * [width, height]
    for _ in range(60):
        seeds = np.vstack([pinned, free])
        centroids = np.array([area_centroid(c)[1] for c in cells(seeds, width, height)])
        free = centroids[len(pinned):]
    return cells(np.vstack([pinned, free]), width, height), width, height


def tag_for(kind, mid, width, height):
    eps = 1e-9 * max(width, height)
    if mid[1] < eps:
        return 1
    if mid[0] > width - eps:
        return 2
    if mid[0] < eps:
        return 4
    if kind == "punch" and mid[0] < 250.0:
        return 5
    return 3


def main():
    kind, n, seed, out = sys.argv[1], int(sys.argv[2]), int(sys.argv[3]), sys.argv[4]
    polys, width, height = build(kind, n, seed)
    scale = max(width, height)

    nodes, index, elements = [], {}, []
    for poly in polys:
        if area_centroid(poly)[0] < 0:
            poly = poly[::-1]
        ids = []
        for p in poly:
            key = (round(p[0] / scale, 10), round(p[1] / scale, 10))
            if key not in index:
                index[key] = len(nodes)
                nodes.append(p)
            if not ids or ids[-1] != index[key]:
                ids.append(index[key])
        if ids[0] == ids[-1]:
            ids.pop()
        elements.append(ids)

    count = {}
    for e in elements:
        for a, b in zip(e, e[1:] + e[:1]):
            k = (min(a, b), max(a, b))
            count[k] = count.get(k, 0) + 1
    boundary = []
    for e in elements:
        for a, b in zip(e, e[1:] + e[:1]):
            if count[(min(a, b), max(a, b))] == 1:
                boundary.append((a, b, tag_for(kind, (nodes[a] + nodes[b]) / 2.0, width, height)))

    with open(out, "w") as f:
        f.write("nvem-mesh 1\n")
        f.write(f"# clipped Voronoi ({kind}), {n} cells, seed {seed}\n")
        f.write(f"{len(nodes)} {len(elements)} {len(boundary)}\n")
        for p in nodes:
            f.write(f"{float(p[0])!r} {float(p[1])!r}\n")
        for e in elements:
            f.write(f"{len(e)} " + " ".join(map(str, e)) + "\n")
        for a, b, t in boundary:
            f.write(f"{a} {b} {t}\n")


if __name__ == "__main__":
    main()
