"""Regenerates the HDBSCAN oracle fixtures with scikit-learn.

Each output file holds a precomputed distance matrix, the parameters and the
labels scikit-learn assigns (-1 is noise). Run from this directory:

    python3 generate.py
"""

import json

import numpy as np
from sklearn.cluster import HDBSCAN
from sklearn.metrics import pairwise_distances


def blob(rng, center, n, spread):
    return rng.normal(loc=center, scale=spread, size=(n, 2))


def write(name, points, min_cluster_size, min_samples):
    matrix = pairwise_distances(points)
    labels = HDBSCAN(
        metric="precomputed",
        min_cluster_size=min_cluster_size,
        min_samples=min_samples,
        allow_single_cluster=False,
    ).fit_predict(matrix)
    out = {
        "name": name,
        "min_cluster_size": min_cluster_size,
        "min_samples": min_samples,
        "matrix": matrix.tolist(),
        "labels": [int(x) for x in labels],
    }
    with open(f"{name}.json", "w") as f:
        json.dump(out, f)
    print(name, labels.tolist())


def main():
    rng = np.random.default_rng(7)
    two = np.vstack([blob(rng, (0.0, 0.0), 12, 0.3), blob(rng, (6.0, 6.0), 12, 0.3)])
    write("two_blobs", two, 4, 3)

    rng = np.random.default_rng(11)
    outlier = np.vstack(
        [blob(rng, (0.0, 0.0), 10, 0.25), blob(rng, (5.0, 0.0), 10, 0.25), [[2.5, 9.0]]]
    )
    write("blobs_outlier", outlier, 4, 3)

    rng = np.random.default_rng(3)
    sparse = rng.uniform(0.0, 10.0, size=(4, 2))
    write("all_noise", sparse, 5, 2)

    rng = np.random.default_rng(5)
    scatter = np.vstack(
        [
            blob(rng, (0.0, 0.0), 15, 0.8),
            blob(rng, (4.0, 1.0), 9, 0.5),
            blob(rng, (1.0, 5.0), 6, 0.4),
            rng.uniform(-3.0, 8.0, size=(6, 2)),
        ]
    )
    write("mixed", scatter, 5, 4)


if __name__ == "__main__":
    main()
