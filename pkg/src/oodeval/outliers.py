"""Isolation forest and local outlier factor over feature vectors.

Both detectors are fitted on in-distribution features (typically the 1-D
max-logit feature) and score queries in novelty mode with "higher = more
anomalous".  Fitting is deterministic given (data, parameters, seed); trees
are built on a single seeded stream and scoring is pure, so queries can be
scored in any order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, FitError, FormatError, ShapeError, ValidationError

DEFAULT_N_TREES = 100
DEFAULT_MAX_SUBSAMPLE = 256
DEFAULT_LOF_NEIGHBORS = 20
LRD_EPS = 1e-10

STANDARD_MODE = "standard"
PAPER_LITERAL_MODE = "paper_literal"

_HARMONIC_EXACT_LIMIT = 1_000_000
_harmonic_table = np.zeros(1)


def _harmonic(m: np.ndarray) -> np.ndarray:
    """H(m) = sum_{i<=m} 1/i, exact (cached cumsum) for m <= 1e6."""
    global _harmonic_table
    m = np.asarray(m, dtype=np.int64)
    top = int(m.max(initial=0))
    if top >= _harmonic_table.shape[0]:
        _harmonic_table = np.concatenate(
            ([0.0], np.cumsum(1.0 / np.arange(1, top + 1)))
        )
    return _harmonic_table[m]


def average_path_length(n):
    """Expected unsuccessful-search path length c(n) in a random binary tree.

    c(n) = 2 H(n-1) - 2 (n-1)/n with exact harmonic numbers up to 1e6 and
    the Euler-Mascheroni approximation above; c(0) = c(1) = 0.
    """
    n_arr = np.atleast_1d(np.asarray(n, dtype=np.float64))
    out = np.zeros_like(n_arr)
    small = (n_arr >= 2) & (n_arr <= _HARMONIC_EXACT_LIMIT)
    if small.any():
        ns = n_arr[small]
        out[small] = 2.0 * _harmonic((ns - 1).astype(np.int64)) - 2.0 * (ns - 1.0) / ns
    big = n_arr > _HARMONIC_EXACT_LIMIT
    if big.any():
        nb = n_arr[big]
        h = np.log(nb - 1.0) + np.euler_gamma + 1.0 / (2.0 * (nb - 1.0))
        out[big] = 2.0 * h - 2.0 * (nb - 1.0) / nb
    return out if np.ndim(n) else float(out[0])


def _validate_features(values, what: str, min_rows: int = 1) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2:
        raise ShapeError(f"{what} must be (N, d), got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ValidationError(f"{what} contain non-finite values")
    if values.shape[0] < min_rows:
        raise FitError(f"{what}: need at least {min_rows} rows, got {values.shape[0]}")
    return values


@dataclass
class IsolationTree:
    """Flat array form of one isolation tree.

    ``feature`` is -1 at leaves; ``left``/``right`` self-point at leaves so a
    vectorized traversal can run all queries level by level.  ``size`` is the
    number of training rows routed to each node at build time.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    sample_indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]


@dataclass
class IsolationForestModel:
    trees: list[IsolationTree]
    n_trees: int
    subsample_size: int
    height_limit: float
    seed: int | None
    mode: str
    n_features: int

    @property
    def c_psi(self) -> float:
        return average_path_length(self.subsample_size)


def _build_forest(data: np.ndarray, subsample_indices: np.ndarray,
                  height_limit: float, rng) -> list[IsolationTree]:
    """Grow every tree of the forest together, level by level.

    All still-splittable nodes across all trees are processed as one batch
    per level (grouped by a tree-major composite key), which keeps the whole
    build in a few hundred vector operations instead of one call chain per
    node.  Every node whose rows are not all identical draws a uniformly
    random feature among those with nonzero range and a uniform split inside
    that range; recursion stops at singletons, duplicates, or the height
    limit.  A split that float-rounds onto a segment boundary (sending every
    row one way) degrades to a leaf so termination never depends on the
    draw.
    """
    n_trees, psi = subsample_indices.shape
    d = data.shape[1]
    stacked = data[subsample_indices.ravel()]
    cap = 2 * psi  # a tree over psi rows has at most 2*psi - 1 nodes

    feature = np.full(n_trees * cap, -1, dtype=np.int64)
    threshold = np.zeros(n_trees * cap)
    local_ids = np.tile(np.arange(cap, dtype=np.int64), n_trees)
    left = local_ids.copy()                 # leaves self-point (local ids)
    right = local_ids.copy()
    size = np.zeros(n_trees * cap, dtype=np.int64)
    size[::cap] = psi
    n_nodes = np.ones(n_trees, dtype=np.int64)

    work_rows = np.arange(n_trees * psi)    # row index into `stacked`
    work_key = (work_rows // psi) * cap     # tree*cap + local node id
    depth = 0
    while work_rows.size and depth < height_limit:
        order = np.argsort(work_key, kind="stable")
        rows_sorted = work_rows[order]
        keys_sorted = work_key[order]
        is_first = np.empty(keys_sorted.size, dtype=bool)
        is_first[0] = True
        is_first[1:] = keys_sorted[1:] != keys_sorted[:-1]
        starts = np.flatnonzero(is_first)
        group_keys = keys_sorted[starts]
        counts = np.diff(np.append(starts, keys_sorted.size))
        n_groups = group_keys.size

        lo = np.empty((n_groups, d))
        hi = np.empty((n_groups, d))
        for f in range(d):
            col = stacked[rows_sorted, f]
            lo[:, f] = np.minimum.reduceat(col, starts)
            hi[:, f] = np.maximum.reduceat(col, starts)
        spread = hi > lo
        can_split = (counts > 1) & spread.any(axis=1)

        chosen_feat = np.full(n_groups, -1, dtype=np.int64)
        chosen_split = np.zeros(n_groups)
        if can_split.any():
            idx = np.flatnonzero(can_split)
            n_candidates = spread[idx].sum(axis=1)
            pick = np.minimum((rng.random(idx.size) * n_candidates).astype(np.int64),
                              n_candidates - 1)
            running = np.cumsum(spread[idx], axis=1)
            feat = np.argmax(running > pick[:, None], axis=1)
            span_lo = lo[idx, feat]
            chosen_feat[idx] = feat
            chosen_split[idx] = span_lo + rng.random(idx.size) * (hi[idx, feat]
                                                                  - span_lo)

        feat_per_row = np.repeat(chosen_feat, counts)
        active = feat_per_row >= 0
        if not active.any():
            break
        go_left = np.zeros(keys_sorted.size, dtype=bool)
        go_left[active] = stacked[rows_sorted[active],
                                  feat_per_row[active]] < \
            np.repeat(chosen_split, counts)[active]
        left_counts = np.add.reduceat(go_left.astype(np.int64), starts)

        boundary = can_split & ((left_counts == 0) | (left_counts == counts))
        if boundary.any():
            chosen_feat[boundary] = -1
            feat_per_row = np.repeat(chosen_feat, counts)
            active = feat_per_row >= 0
            if not active.any():
                break

        splitting = np.flatnonzero(chosen_feat >= 0)
        tree_of_split = group_keys[splitting] // cap   # nondecreasing
        tree_first = np.empty(splitting.size, dtype=bool)
        tree_first[0] = True
        tree_first[1:] = tree_of_split[1:] != tree_of_split[:-1]
        seg_starts = np.flatnonzero(tree_first)
        seg_lengths = np.diff(np.append(seg_starts, splitting.size))
        rank_in_tree = np.arange(splitting.size) - np.repeat(seg_starts, seg_lengths)
        base_local = n_nodes[tree_of_split] + 2 * rank_in_tree
        n_nodes += 2 * np.bincount(tree_of_split, minlength=n_trees)

        parents = group_keys[splitting]
        feature[parents] = chosen_feat[splitting]
        threshold[parents] = chosen_split[splitting]
        left[parents] = base_local
        right[parents] = base_local + 1
        child_flat = tree_of_split * cap + base_local
        size[child_flat] = left_counts[splitting]
        size[child_flat + 1] = counts[splitting] - left_counts[splitting]

        key_base = np.full(n_groups, -1, dtype=np.int64)
        key_base[splitting] = child_flat
        key_base_per_row = np.repeat(key_base, counts)
        work_rows = rows_sorted[active]
        work_key = key_base_per_row[active] + (~go_left[active])
        depth += 1

    trees = []
    for t in range(n_trees):
        lo_idx, hi_idx = t * cap, t * cap + int(n_nodes[t])
        trees.append(IsolationTree(
            feature=feature[lo_idx:hi_idx].astype(np.int32),
            threshold=threshold[lo_idx:hi_idx].copy(),
            left=left[lo_idx:hi_idx].astype(np.int32),
            right=right[lo_idx:hi_idx].astype(np.int32),
            size=size[lo_idx:hi_idx].astype(np.int32),
            sample_indices=subsample_indices[t].astype(np.int32),
        ))
    return trees


def iforest_fit(features, n_trees: int = DEFAULT_N_TREES, subsample: int | None = None,
                seed: int | None = None, height_limit: float | None = None,
                mode: str = STANDARD_MODE) -> IsolationForestModel:
    """Fit an isolation forest of random-split trees.

    Each tree partitions an independent uniform subsample (default
    min(256, N)) by repeatedly picking a feature with nonzero range and a
    uniform split inside it, until rows are singletons, duplicates, or the
    height limit ceil(log2 subsample) is hit.  Pass
    ``height_limit=math.inf`` to always isolate down to singletons.
    """
    features = _validate_features(features, "features", min_rows=2)
    n, _ = features.shape
    if n_trees < 1:
        raise ConfigError(f"need at least one tree, got {n_trees}")
    if mode not in (STANDARD_MODE, PAPER_LITERAL_MODE):
        raise ConfigError(f"unknown mode {mode!r}")
    psi = min(DEFAULT_MAX_SUBSAMPLE, n) if subsample is None else int(subsample)
    if not 2 <= psi <= n:
        raise ConfigError(f"subsample must be in [2, {n}], got {psi}")
    if height_limit is None:
        height_limit = math.ceil(math.log2(psi))
    if height_limit < 1:
        raise ConfigError(f"height limit must be >= 1, got {height_limit}")

    rng = np.random.default_rng(seed)
    subsamples = np.stack([rng.choice(n, size=psi, replace=False)
                           for _ in range(n_trees)])
    trees = _build_forest(features, subsamples, height_limit, rng)
    return IsolationForestModel(
        trees=trees, n_trees=n_trees, subsample_size=psi,
        height_limit=float(height_limit), seed=seed, mode=mode,
        n_features=features.shape[1],
    )


def _traverse(tree: IsolationTree, queries: np.ndarray):
    """Vectorized root-to-leaf descent; returns (edge depth, leaf index)."""
    n = queries.shape[0]
    node = np.zeros(n, dtype=np.int64)
    depth = np.zeros(n, dtype=np.float64)
    row_idx = np.arange(n)
    while True:
        feat = tree.feature[node]
        internal = feat >= 0
        if not internal.any():
            return depth, node
        values = queries[row_idx, np.maximum(feat, 0)]
        go_left = values < tree.threshold[node]
        nxt = np.where(go_left, tree.left[node], tree.right[node])
        node = np.where(internal, nxt, node)
        depth += internal


def _traverse_forest(trees: list[IsolationTree], queries: np.ndarray,
                     chunk_elements: int = 2_000_000):
    """Descend every (tree, query) pair at once over flattened node arrays.

    Returns (depths, leaf_sizes) of shape (n_trees, n_queries).  Queries are
    chunked so the state arrays stay within ``chunk_elements`` entries.
    """
    n_trees = len(trees)
    offsets = np.cumsum([0] + [t.n_nodes for t in trees][:-1])
    feat_flat = np.concatenate([t.feature for t in trees]).astype(np.int64)
    thr_flat = np.concatenate([t.threshold for t in trees])
    left_flat = np.concatenate([t.left.astype(np.int64) + off
                                for t, off in zip(trees, offsets)])
    right_flat = np.concatenate([t.right.astype(np.int64) + off
                                 for t, off in zip(trees, offsets)])
    size_flat = np.concatenate([t.size for t in trees]).astype(np.int64)

    n = queries.shape[0]
    chunk = max(1, chunk_elements // n_trees)
    depths = np.empty((n_trees, n))
    leaf_sizes = np.empty((n_trees, n), dtype=np.int64)
    for start in range(0, n, chunk):
        block = queries[start:start + chunk]
        m = block.shape[0]
        node = np.repeat(offsets, m)            # pair layout: tree-major
        depth = np.zeros(n_trees * m)
        qidx = np.tile(np.arange(m), n_trees)
        while True:
            feat = feat_flat[node]
            internal = feat >= 0
            if not internal.any():
                break
            values = block[qidx, np.maximum(feat, 0)]
            go_left = values < thr_flat[node]
            # leaves self-point, so no mask is needed on the node update
            node = np.where(go_left, left_flat[node], right_flat[node])
            depth += internal
        depths[:, start:start + chunk] = depth.reshape(n_trees, m)
        leaf_sizes[:, start:start + chunk] = size_flat[node].reshape(n_trees, m)
    return depths, leaf_sizes


def iforest_score(model: IsolationForestModel, queries,
                  mode: str | None = None) -> np.ndarray:
    """Isolation scores for query rows, higher = more anomalous.

    ``standard`` emits 2^(-E[h]/c(psi)) in (0, 1], where the per-tree path
    length h is the edge depth plus the usual c(leaf size) adjustment.

    ``paper_literal`` evaluates the ensemble-sum variant
    S = -0.5 - sum_j 2^(-depth_j / (n_trees * c(psi))) verbatim, with the
    raw edge depth per tree; that quantity is largest (least negative) for
    inliers, so its negation is emitted to keep the unified sign convention.
    """
    queries = _validate_features(queries, "queries")
    if queries.shape[1] != model.n_features:
        raise ShapeError(
            f"queries have {queries.shape[1]} features, model was fitted on "
            f"{model.n_features}"
        )
    if mode is None:
        mode = model.mode
    if mode not in (STANDARD_MODE, PAPER_LITERAL_MODE):
        raise ConfigError(f"unknown mode {mode!r}")

    adjustment = average_path_length(np.arange(model.subsample_size + 1))
    c_psi = model.c_psi
    depths, leaf_sizes = _traverse_forest(model.trees, queries)
    if mode == STANDARD_MODE:
        mean_path = (depths + adjustment[leaf_sizes]).mean(axis=0)
        return np.power(2.0, -mean_path / c_psi)
    total = np.power(2.0, -depths / (model.n_trees * c_psi)).sum(axis=0)
    return 0.5 + total  # negation of the printed S(x); see docstring


@dataclass
class LofModel:
    points: np.ndarray
    k: int
    kdist: np.ndarray
    lrd: np.ndarray


def lof_fit(features, k: int = DEFAULT_LOF_NEIGHBORS) -> LofModel:
    """Precompute k-distances and local reachability densities.

    lrd(A) = |N(A)| / sum_{B in N(A)} max(kdist(B), d(A, B)) with Euclidean
    distances.  Neighborhoods include every point tied at the k-th distance,
    and the sum is renormalized by the actual neighbor count.  Zero
    reachability sums (duplicate points) are clamped at 1e-10 so lrd stays
    finite.
    """
    features = _validate_features(features, "features", min_rows=2)
    if k < 1:
        raise ConfigError(f"need k >= 1, got {k}")
    n = features.shape[0]
    if n <= k:
        raise FitError(f"need more than k={k} points, got {n}")
    dist = cdist(features, features)
    np.fill_diagonal(dist, np.inf)
    kdist = np.partition(dist, k - 1, axis=1)[:, k - 1]
    neighbors = dist <= kdist[:, None]
    counts = neighbors.sum(axis=1)
    reach = np.where(neighbors, np.maximum(kdist[None, :], dist), 0.0)
    lrd = counts / np.maximum(reach.sum(axis=1), LRD_EPS)
    return LofModel(points=features.copy(), k=int(k), kdist=kdist, lrd=lrd)


def lof_score(model: LofModel, queries) -> np.ndarray:
    """LOF of each query against the fitted set (novelty mode).

    Queries are never their own neighbors.  LOF(A) is the mean neighbor lrd
    over lrd(A); values near 1 are inliers and values above 1 are outliers.
    """
    queries = _validate_features(queries, "queries")
    if queries.shape[1] != model.points.shape[1]:
        raise ShapeError(
            f"queries have {queries.shape[1]} features, model was fitted on "
            f"{model.points.shape[1]}"
        )
    dist = cdist(queries, model.points)
    kdist_q = np.partition(dist, model.k - 1, axis=1)[:, model.k - 1]
    neighbors = dist <= kdist_q[:, None]
    counts = neighbors.sum(axis=1)
    reach = np.where(neighbors, np.maximum(model.kdist[None, :], dist), 0.0)
    lrd_q = counts / np.maximum(reach.sum(axis=1), LRD_EPS)
    neighbor_lrd = np.where(neighbors, model.lrd[None, :], 0.0).sum(axis=1)
    return neighbor_lrd / (counts * lrd_q)


_BLOB_MAGIC = b"OODMDL01"
_KIND_IFOREST = 1
_KIND_LOF = 2
MODEL_BLOB_VERSION = 1


def save_model(model, path) -> None:
    """Serialize a fitted model to a binary blob plus a JSON sidecar.

    The sidecar (``<path>.json``) records parameters and seed; the blob holds
    the numeric state, little-endian, so a reloaded model scores identically.
    """
    path = Path(path)
    if isinstance(model, IsolationForestModel):
        chunks = [_BLOB_MAGIC, struct.pack("<BI", _KIND_IFOREST, model.n_trees)]
        for tree in model.trees:
            chunks.append(struct.pack("<II", tree.n_nodes, tree.sample_indices.shape[0]))
            chunks.append(tree.feature.astype("<i4").tobytes())
            chunks.append(tree.threshold.astype("<f8").tobytes())
            chunks.append(tree.left.astype("<i4").tobytes())
            chunks.append(tree.right.astype("<i4").tobytes())
            chunks.append(tree.size.astype("<i4").tobytes())
            chunks.append(tree.sample_indices.astype("<i4").tobytes())
        sidecar = {
            "version": MODEL_BLOB_VERSION,
            "kind": "isolation_forest",
            "n_trees": model.n_trees,
            "subsample_size": model.subsample_size,
            "height_limit": "inf" if math.isinf(model.height_limit)
                            else int(model.height_limit),
            "seed": model.seed,
            "mode": model.mode,
            "n_features": model.n_features,
        }
    elif isinstance(model, LofModel):
        n, d = model.points.shape
        chunks = [
            _BLOB_MAGIC,
            struct.pack("<BII", _KIND_LOF, n, d),
            model.points.astype("<f8").tobytes(),
            model.kdist.astype("<f8").tobytes(),
            model.lrd.astype("<f8").tobytes(),
        ]
        sidecar = {
            "version": MODEL_BLOB_VERSION,
            "kind": "lof",
            "k": model.k,
            "n_points": n,
            "n_features": d,
        }
    else:
        raise ConfigError(f"cannot serialize {type(model).__name__}")
    path.write_bytes(b"".join(chunks))
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_model(path):
    """Inverse of :func:`save_model`."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(_BLOB_MAGIC)] != _BLOB_MAGIC:
        raise FormatError(f"{path}: not a model blob")
    try:
        sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: missing or invalid sidecar ({exc})") from exc
    if sidecar.get("version") != MODEL_BLOB_VERSION:
        raise FormatError(f"{path}: unsupported model version {sidecar.get('version')!r}")

    pos = len(_BLOB_MAGIC)
    (kind,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    if kind == _KIND_IFOREST:
        (n_trees,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        trees = []
        for _ in range(n_trees):
            n_nodes, psi = struct.unpack_from("<II", blob, pos)
            pos += 8
            arrays = []
            for dtype, count in (("<i4", n_nodes), ("<f8", n_nodes), ("<i4", n_nodes),
                                 ("<i4", n_nodes), ("<i4", n_nodes), ("<i4", psi)):
                nbytes = np.dtype(dtype).itemsize * count
                arrays.append(np.frombuffer(blob, dtype=dtype, count=count,
                                            offset=pos).copy())
                pos += nbytes
            trees.append(IsolationTree(*arrays))
        height = sidecar["height_limit"]
        return IsolationForestModel(
            trees=trees, n_trees=n_trees,
            subsample_size=int(sidecar["subsample_size"]),
            height_limit=math.inf if height == "inf" else float(height),
            seed=sidecar["seed"], mode=sidecar["mode"],
            n_features=int(sidecar["n_features"]),
        )
    if kind == _KIND_LOF:
        n, d = struct.unpack_from("<II", blob, pos)
        pos += 8
        points = np.frombuffer(blob, dtype="<f8", count=n * d, offset=pos)
        pos += 8 * n * d
        kdist = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
        pos += 8 * n
        lrd = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
        return LofModel(points=points.reshape(n, d).copy(), k=int(sidecar["k"]),
                        kdist=kdist.copy(), lrd=lrd.copy())
    raise FormatError(f"{path}: unknown model kind {kind}")
