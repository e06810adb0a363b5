"""Shared oracle helpers, implemented independently of the library kernels."""

import numpy as np


def decode_coords(indices):
    """Bit-by-bit coordinate extraction from Morton indices."""
    out = np.zeros((len(indices), 3), dtype=np.int64)
    for row, idx in enumerate(np.asarray(indices, dtype=np.uint64).tolist()):
        for k in range(21):
            out[row, 0] |= ((idx >> (3 * k)) & 1) << k
            out[row, 1] |= ((idx >> (3 * k + 1)) & 1) << k
            out[row, 2] |= ((idx >> (3 * k + 2)) & 1) << k
    return out


def decode_coords_vec(indices):
    """Vectorized bit-by-bit extraction (no magic-mask tricks)."""
    idx = np.asarray(indices, dtype=np.uint64)
    out = np.zeros((idx.shape[0], 3), dtype=np.int64)
    one = np.uint64(1)
    for k in range(21):
        out[:, 0] |= (((idx >> np.uint64(3 * k)) & one) << np.uint64(k)).astype(np.int64)
        out[:, 1] |= (((idx >> np.uint64(3 * k + 1)) & one) << np.uint64(k)).astype(np.int64)
        out[:, 2] |= (((idx >> np.uint64(3 * k + 2)) & one) << np.uint64(k)).astype(np.int64)
    return out


def sphere_points(rng, n, radius=0.45, center=0.5):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius + center


def py_decode(idx, bits=21):
    ix = iy = iz = 0
    for k in range(bits):
        ix |= ((idx >> (3 * k)) & 1) << k
        iy |= ((idx >> (3 * k + 1)) & 1) << k
        iz |= ((idx >> (3 * k + 2)) & 1) << k
    return ix, iy, iz


def py_encode(ix, iy, iz, bits=21):
    idx = 0
    for k in range(bits):
        idx |= (((iz >> k) & 1) << 2 | ((iy >> k) & 1) << 1 | ((ix >> k) & 1)) << (3 * k)
    return idx


def py_interaction_indices(level, idx):
    """Stencil membership by grid arithmetic: parent-window children minus
    the box's own 3x3x3 window."""
    if level < 2:
        return []
    n = 1 << level
    ix, iy, iz = py_decode(idx, bits=level)
    out = []
    for oz in range(-2, 4):
        for oy in range(-2, 4):
            for ox in range(-2, 4):
                jx = 2 * (ix >> 1) + ox
                jy = 2 * (iy >> 1) + oy
                jz = 2 * (iz >> 1) + oz
                if not (0 <= jx < n and 0 <= jy < n and 0 <= jz < n):
                    continue
                if abs(jx - ix) <= 1 and abs(jy - iy) <= 1 and abs(jz - iz) <= 1:
                    continue
                out.append(py_encode(jx, jy, jz, bits=level))
    return out


def oracle_classify(node, global_src_boxes, plan):
    """Literal membership predicates of the five box types, one box at a time."""
    from fmmkit.boxtype import BoxType

    g = plan.units_per_node
    l_par = plan.partition_level
    l_crit = plan.critical_level

    def node_of(index, level):
        return int(plan.box_proc_id[index >> (3 * (level - l_par))]) // g

    out = {}
    for level, boxes in sorted(global_src_boxes.items()):
        types = []
        for b in np.asarray(boxes).tolist():
            if plan.nodes == 1 or level < l_crit:
                types.append(BoxType.DOMESTIC)
                continue
            if level == l_crit:
                span = 8 ** (l_par - l_crit)
                owners = {node_of(c, l_par) for c in range(b * span, (b + 1) * span)}
                if node not in owners:
                    types.append(BoxType.IMPORT)
                elif owners == {node}:
                    types.append(BoxType.EXPORT)
                else:
                    types.append(BoxType.ROOT)
                continue
            mine = node_of(b, level) == node
            neighbor_owners = {
                node_of(k, level) for k in py_interaction_indices(level, b)
            }
            if mine:
                types.append(
                    BoxType.EXPORT if neighbor_owners - {node} else BoxType.DOMESTIC
                )
            else:
                types.append(
                    BoxType.IMPORT if node in neighbor_owners else BoxType.OTHER
                )
        out[level] = np.array(types, dtype=np.int8)
    return out
