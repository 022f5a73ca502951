"""Shared test oracles: finite differences, brute-force DTW, triplet
enumeration by exhaustive loops. These deliberately avoid the library's own
code paths so they can act as independent references."""

import numpy as np

FD_STEP = 1e-5


def numeric_grad(f, x, h=FD_STEP):
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_rel_err(analytic, numeric):
    """Max-norm relative disagreement between two gradient vectors."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def brute_force_dtw(x, y):
    """Unbanded DTW with squared pointwise cost, full O(Tx*Ty) table."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tx, ty = len(x), len(y)
    d = np.full((tx + 1, ty + 1), np.inf)
    d[0, 0] = 0.0
    for i in range(1, tx + 1):
        for j in range(1, ty + 1):
            # Multiply rather than ** 2: scalar pow can be off by one ulp,
            # and the equivalence contract is bitwise.
            diff = x[i - 1] - y[j - 1]
            d[i, j] = diff * diff + min(d[i - 1, j - 1], d[i - 1, j], d[i, j - 1])
    return float(d[tx, ty])


def brute_force_triplets(labels):
    """Exhaustive valid-triplet enumeration in lexicographic order."""
    labels = list(labels)
    n = len(labels)
    out = []
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for neg in range(n):
                if labels[neg] != labels[a]:
                    out.append((a, p, neg))
    return out


def sequential_squared_ed(x, y):
    """Squared Euclidean distance accumulated strictly left to right, matching
    the order a width-0 DTW band adds its diagonal costs."""
    total = 0.0
    for xi, yi in zip(x, y):
        diff = xi - yi
        total += diff * diff
    return total


def write_ucr(bundle, root, name=None):
    """Write a DatasetBundle as <root>/<name>/<name>_{TRAIN,TEST}.tsv in the
    label-first tab-separated archive layout."""
    name = name or bundle.name
    directory = root / name
    directory.mkdir(parents=True, exist_ok=True)
    for tag, ds in (("TRAIN", bundle.train), ("TEST", bundle.test)):
        lines = []
        for row, label in zip(ds.values, ds.labels):
            lines.append("\t".join([ds.label_names[label]] + [f"{v:.8f}" for v in row]))
        (directory / f"{name}_{tag}.tsv").write_text("\n".join(lines) + "\n")
    return directory
