"""Pure-Python union-find kernels; reference twin of ``_ckernels.pyx``."""

import numpy as np

_N4 = ((-1, 0), (0, -1), (0, 1), (1, 0))
_N8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def merge_pairs(order, height, width, conn8=False, frame=False):
    """Elder-rule merge events of a pixel filtration.

    Pixels enter in ``order`` (flat row-major indices). Whenever two
    components meet, the one whose birth pixel entered later dies at the
    entering pixel. With ``frame`` a virtual, oldest component touches every
    border pixel.

    Returns ``(birth_pixels, death_pixels, root)`` where ``root`` is the
    birth pixel of the surviving component, or -1 for the frame.
    """
    order = np.asarray(order, dtype=np.int64)
    n = height * width
    FRAME = n
    rank = np.empty(n + 1, dtype=np.int64)
    rank[order] = np.arange(n, dtype=np.int64)
    rank[FRAME] = -1
    parent = [-1] * (n + 1)
    if frame:
        parent[FRAME] = FRAME
    rank = rank.tolist()
    offsets = _N8 if conn8 else _N4

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    births, deaths = [], []
    for p in order.tolist():
        r, c = divmod(p, width)
        roots = []
        for dr, dc in offsets:
            rr, cc = r + dr, c + dc
            if 0 <= rr < height and 0 <= cc < width:
                q = rr * width + cc
                if parent[q] >= 0:
                    roots.append(find(q))
            elif frame:
                roots.append(FRAME)
        if not roots:
            parent[p] = p
            continue
        oldest = min(roots, key=rank.__getitem__)
        parent[p] = oldest
        for x in roots:
            if x != oldest and parent[x] == x:
                births.append(x)
                deaths.append(p)
                parent[x] = oldest
    if frame:
        root = -1
    else:
        root = find(int(order[0])) if n else -1
    return (np.asarray(births, dtype=np.int64),
            np.asarray(deaths, dtype=np.int64), root)
