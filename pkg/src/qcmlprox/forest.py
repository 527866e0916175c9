"""Regression random forest with full bootstrap bookkeeping.

Built from scratch because the proximity formulas need per-tree state
that off-the-shelf forests do not expose: the bootstrap multiplicity
c_j(t) of every training index in every tree, and the leaf each training
point reaches whether in-bag or not. Three proximities are derived:

  - the classic shared-leaf proximity with per-leaf population weighting,
  - the out-of-bag refinement that only counts co-out-of-bag pairs,
  - the GAP proximity, whose rows are exactly the weights that express
    the forest's out-of-bag prediction as a weighted average of training
    targets (the module's master correctness oracle).

Trees split greedily on midpoint thresholds, tie-breaking by lowest
feature index then lowest threshold for reproducibility.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NoOobCoverError, SchemaError
from .proximity import ProximityMatrix

CRITERIA = ("mse", "mae")

_MAGIC = b"FRST1"


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 50
    min_samples_leaf: int = 1
    max_features: object = "sqrt"  # "sqrt" | "all" | fraction in (0, 1]
    criterion: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ConfigError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        mf = self.max_features
        if not (mf in ("sqrt", "all") or (isinstance(mf, float) and 0.0 < mf <= 1.0)):
            raise ConfigError(f"max_features must be 'sqrt', 'all', or a fraction, got {mf!r}")

    def mtry(self, n_features: int) -> int:
        if self.max_features == "all":
            return n_features
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        return max(1, min(n_features, int(self.max_features * n_features)))


@dataclass(frozen=True)
class Tree:
    """Flat node arrays plus per-training-point bookkeeping.

    feature[i] == -1 marks a leaf; internal nodes route x[feature] <=
    threshold to the left child. bootstrap[j] is the multiplicity of
    training index j in this tree's bootstrap sample and train_leaf[j]
    the leaf node every training point reaches (in-bag or not).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    bootstrap: np.ndarray
    train_leaf: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def route(self, x_rows: np.ndarray) -> np.ndarray:
        """Leaf node index for each row, vectorized level by level."""
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        node = np.zeros(x_rows.shape[0], dtype=np.int32)
        live = self.feature[node] >= 0
        while live.any():
            idx = np.flatnonzero(live)
            cur = node[idx]
            feat = self.feature[cur]
            go_left = x_rows[idx, feat] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            live[idx] = self.feature[node[idx]] >= 0
        return node

    def leaf_members(self, leaf: int):
        """Unique bagged training indices in a leaf and their multiplicities."""
        members = np.flatnonzero((self.train_leaf == leaf) & (self.bootstrap > 0))
        return members, self.bootstrap[members]


@dataclass(frozen=True)
class Forest:
    trees: tuple
    config: ForestConfig
    n_train: int
    _caches: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.trees) != self.config.n_trees:
            raise SchemaError(f"forest has {len(self.trees)} trees, config says {self.config.n_trees}")

    def bootstrap_matrix(self) -> np.ndarray:
        """(n_trees, n_train) multiplicities c_j(t)."""
        if "boot" not in self._caches:
            self._caches["boot"] = np.stack([t.bootstrap for t in self.trees])
        return self._caches["boot"]

    def train_leaf_matrix(self) -> np.ndarray:
        if "leaf" not in self._caches:
            self._caches["leaf"] = np.stack([t.train_leaf for t in self.trees])
        return self._caches["leaf"]

    def oob_trees(self, i: int) -> np.ndarray:
        """Indices of the trees where training point i is out-of-bag."""
        return np.flatnonzero(self.bootstrap_matrix()[:, i] == 0)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

class _RunningAbsDev:
    """Running sum of |y - median| under one-at-a-time insertion, via the
    usual two-heap median with side sums."""

    __slots__ = ("low", "high", "low_sum", "high_sum")

    def __init__(self):
        self.low, self.high = [], []
        self.low_sum = self.high_sum = 0.0

    def push(self, v: float):
        if not self.low or v <= -self.low[0]:
            heapq.heappush(self.low, -v)
            self.low_sum += v
        else:
            heapq.heappush(self.high, v)
            self.high_sum += v
        if len(self.low) > len(self.high) + 1:
            moved = -heapq.heappop(self.low)
            self.low_sum -= moved
            heapq.heappush(self.high, moved)
            self.high_sum += moved
        elif len(self.high) > len(self.low):
            moved = heapq.heappop(self.high)
            self.high_sum -= moved
            heapq.heappush(self.low, -moved)
            self.low_sum += moved

    def abs_dev(self) -> float:
        med = -self.low[0]
        return (len(self.low) * med - self.low_sum) + (self.high_sum - len(self.high) * med)


def _prefix_abs_devs(y: np.ndarray) -> np.ndarray:
    """abs-deviation-from-median of y[:i] for i = 1..len(y)."""
    acc = _RunningAbsDev()
    out = np.empty(y.size)
    for i, v in enumerate(y):
        acc.push(float(v))
        out[i] = acc.abs_dev()
    return out


def _node_impurity(y: np.ndarray, criterion: str) -> float:
    if criterion == "mse":
        return float(np.sum((y - y.mean()) ** 2))
    return float(np.sum(np.abs(y - np.median(y))))


def _best_split(xb, yb, rows, candidates, min_leaf, criterion):
    """Best (feature, threshold, left_rows, right_rows) or None.

    Scans candidate features in ascending index order and thresholds in
    ascending value order, accepting only strict improvements, so ties
    resolve to the lowest feature index, then the lowest threshold.
    """
    parent = _node_impurity(yb[rows], criterion)
    m = rows.size
    best = None
    best_score = parent
    for f in candidates:
        vals = xb[rows, f]
        order = np.argsort(vals, kind="stable")
        v_sorted = vals[order]
        if v_sorted[0] == v_sorted[-1]:
            continue
        y_sorted = yb[rows[order]]
        splittable = v_sorted[1:] > v_sorted[:-1]
        left_cnt = np.arange(1, m)
        ok = splittable & (left_cnt >= min_leaf) & (m - left_cnt >= min_leaf)
        if not ok.any():
            continue
        if criterion == "mse":
            csum = np.cumsum(y_sorted)
            csum2 = np.cumsum(y_sorted ** 2)
            sse_l = csum2[:-1] - csum[:-1] ** 2 / left_cnt
            sse_r = (csum2[-1] - csum2[:-1]) - (csum[-1] - csum[:-1]) ** 2 / (m - left_cnt)
            score = np.maximum(sse_l, 0.0) + np.maximum(sse_r, 0.0)
        else:
            dev_l = _prefix_abs_devs(y_sorted)[:-1]
            dev_r = _prefix_abs_devs(y_sorted[::-1])[:-1][::-1]
            score = dev_l + dev_r
        score = np.where(ok, score, np.inf)
        pos = int(np.argmin(score))
        if score[pos] < best_score:
            best_score = float(score[pos])
            thr = 0.5 * (v_sorted[pos] + v_sorted[pos + 1])
            best = (int(f), float(thr), rows[order[: pos + 1]], rows[order[pos + 1:]])
    return best


def _fit_tree(x, y, config: ForestConfig, rng) -> Tree:
    n, d = x.shape
    boot_idx = rng.integers(0, n, size=n)
    counts = np.bincount(boot_idx, minlength=n).astype(np.int64)
    xb, yb = x[boot_idx], y[boot_idx]
    mtry = config.mtry(d)

    feature, threshold, left, right, value = [], [], [], [], []

    def make_leaf(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(yb[rows].mean()))
        return len(feature) - 1

    def build(rows, depth):
        ys = yb[rows]
        if depth >= config.max_depth or rows.size < 2 * config.min_samples_leaf \
                or ys.min() == ys.max():
            return make_leaf(rows)
        cand = np.sort(rng.choice(d, size=mtry, replace=False))
        split = _best_split(xb, yb, rows, cand, config.min_samples_leaf, config.criterion)
        if split is None:
            return make_leaf(rows)
        f, thr, rows_l, rows_r = split
        node = len(feature)
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        left[node] = build(rows_l, depth + 1)
        right[node] = build(rows_r, depth + 1)
        return node

    build(np.arange(n), 0)
    tree = Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
        bootstrap=counts,
        train_leaf=np.zeros(n, dtype=np.int32),
    )
    return Tree(
        feature=tree.feature, threshold=tree.threshold, left=tree.left,
        right=tree.right, value=tree.value, bootstrap=counts,
        train_leaf=tree.route(x).astype(np.int32),
    )


def fit_forest(config: ForestConfig, train_set) -> Forest:
    """Fit a bagged CART regression forest on (X, y).

    Each tree draws its bootstrap sample and split candidates from an
    independent stream seeded by (config.seed, tree index), so fits are
    reproducible regardless of evaluation order.
    """
    x, y = train_set
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("training set is empty")
    if y.shape != (x.shape[0],):
        raise SchemaError(f"y shape {y.shape} does not match {x.shape[0]} rows")
    trees = []
    for t in range(config.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, t]))
        trees.append(_fit_tree(x, y, config, rng))
    return Forest(trees=tuple(trees), config=config, n_train=x.shape[0])


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict(forest: Forest, x) -> np.ndarray:
    """Mean over trees of the leaf value reached by each row."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    acc = np.zeros(x.shape[0])
    for tree in forest.trees:
        acc += tree.value[tree.route(x)]
    return acc / len(forest.trees)


def oob_predict(forest: Forest, i: int) -> float:
    """Mean leaf value of x_i over the trees where i is out-of-bag."""
    trees = forest.oob_trees(i)
    if trees.size == 0:
        raise NoOobCoverError(i)
    vals = [forest.trees[t].value[forest.trees[t].train_leaf[i]] for t in trees]
    return float(np.mean(vals))


def oob_predict_all(forest: Forest) -> tuple[np.ndarray, np.ndarray]:
    """OOB predictions for every training point plus the coverage mask."""
    boot = forest.bootstrap_matrix()
    leaves = forest.train_leaf_matrix()
    vals = np.stack([t.value[leaves[k]] for k, t in enumerate(forest.trees)])
    oob = boot == 0
    cover = oob.sum(axis=0)
    covered = cover > 0
    sums = np.where(oob, vals, 0.0).sum(axis=0)
    out = np.full(forest.n_train, np.nan)
    out[covered] = sums[covered] / cover[covered]
    return out, covered


# ---------------------------------------------------------------------------
# Proximities
# ---------------------------------------------------------------------------

def _row_leaves(forest: Forest, x_rows):
    """Per-tree leaf ids for explicit query rows (None means train rows)."""
    if x_rows is None:
        return forest.train_leaf_matrix(), True
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    return np.stack([t.route(x_rows) for t in forest.trees]), False


def prox_breiman(forest: Forest, x_rows=None, row_role: str = "train") -> ProximityMatrix:
    """Shared-leaf proximity with per-leaf population weighting:
    entry (i, j) averages 1/N_i over the trees where train point j falls
    in row i's leaf, N_i being that leaf's training population. Rows sum
    to one by construction. Pass x_rows=None for train-by-train."""
    row_leaves, is_train = _row_leaves(forest, x_rows)
    train_leaves = forest.train_leaf_matrix()
    n_rows = row_leaves.shape[1]
    acc = np.zeros((n_rows, forest.n_train))
    for t in range(len(forest.trees)):
        pop = np.bincount(train_leaves[t], minlength=forest.trees[t].n_nodes)
        same = train_leaves[t][None, :] == row_leaves[t][:, None]
        acc += same / pop[row_leaves[t]][:, None]
    acc /= len(forest.trees)
    np.clip(acc, 0.0, 1.0, out=acc)
    return ProximityMatrix(values=acc, metric="rf-breiman",
                           row_role="train" if is_train else row_role, col_role="train")


def prox_oob(forest: Forest, i: int, j: int) -> float:
    """Out-of-bag proximity: among the trees where i is out-of-bag and j is
    also out-of-bag, the fraction in which j shares i's leaf. Zero when the
    denominator is empty (no co-out-of-bag evidence)."""
    boot = forest.bootstrap_matrix()
    leaves = forest.train_leaf_matrix()
    s_i = boot[:, i] == 0
    j_oob = s_i & (boot[:, j] == 0)
    denom = int(j_oob.sum())
    if denom == 0:
        return 0.0
    num = int((j_oob & (leaves[:, i] == leaves[:, j])).sum())
    return num / denom


def prox_oob_matrix(forest: Forest) -> ProximityMatrix:
    """Dense train-by-train out-of-bag proximity (Eq.-(2)-style)."""
    boot = forest.bootstrap_matrix()
    leaves = forest.train_leaf_matrix()
    n = forest.n_train
    num = np.zeros((n, n))
    den = np.zeros((n, n))
    for t in range(boot.shape[0]):
        oob = boot[t] == 0
        pair_oob = np.outer(oob, oob)
        den += pair_oob
        same = leaves[t][:, None] == leaves[t][None, :]
        num += pair_oob & same
    vals = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    np.clip(vals, 0.0, 1.0, out=vals)
    return ProximityMatrix(values=vals, metric="rf-oob", row_role="train", col_role="train")


def prox_gap(forest: Forest, x_rows=None, row_role: str = "train") -> ProximityMatrix:
    """Geometry-and-accuracy-preserving proximity.

    For a train row i, averages over the trees where i is out-of-bag the
    bag-multiplicity share c_j / |M_i| of each bagged leaf-mate j. Test
    rows (x_rows given) are out-of-bag everywhere, so all trees count.
    Rows sum to one; a train row with no out-of-bag tree is an error.
    """
    row_leaves, is_train = _row_leaves(forest, x_rows)
    train_leaves = forest.train_leaf_matrix()
    boot = forest.bootstrap_matrix()
    n_trees = len(forest.trees)
    n_rows = row_leaves.shape[1]

    acc = np.zeros((n_rows, forest.n_train))
    counts = np.zeros(n_rows)
    for t in range(n_trees):
        wpop = np.bincount(train_leaves[t], weights=boot[t],
                           minlength=forest.trees[t].n_nodes)
        if is_train:
            live = boot[t] == 0
            if not live.any():
                continue
            rl = row_leaves[t][live]
            same = train_leaves[t][None, :] == rl[:, None]
            acc[live] += same * boot[t][None, :] / wpop[rl][:, None]
            counts[live] += 1
        else:
            rl = row_leaves[t]
            same = train_leaves[t][None, :] == rl[:, None]
            acc += same * boot[t][None, :] / wpop[rl][:, None]
            counts += 1
    if is_train and not counts.all():
        raise NoOobCoverError(int(np.flatnonzero(counts == 0)[0]))
    acc /= counts[:, None]
    np.clip(acc, 0.0, 1.0, out=acc)
    return ProximityMatrix(values=acc, metric="rf-gap",
                           row_role="train" if is_train else row_role, col_role="train")


# ---------------------------------------------------------------------------
# Forest file format
# ---------------------------------------------------------------------------

_MF_CODES = {"sqrt": 0, "all": 1}


def save_forest(forest: Forest, path) -> None:
    cfg = forest.config
    mf_code = _MF_CODES.get(cfg.max_features, 2)
    mf_frac = cfg.max_features if mf_code == 2 else 0.0
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIBdBqI", cfg.n_trees, cfg.max_depth,
                             cfg.min_samples_leaf, mf_code, mf_frac,
                             CRITERIA.index(cfg.criterion), cfg.seed, forest.n_train))
        for tree in forest.trees:
            fh.write(struct.pack("<I", tree.n_nodes))
            fh.write(tree.feature.astype("<i4").tobytes())
            fh.write(tree.threshold.astype("<f8").tobytes())
            fh.write(tree.left.astype("<i4").tobytes())
            fh.write(tree.right.astype("<i4").tobytes())
            fh.write(tree.value.astype("<f8").tobytes())
            fh.write(tree.bootstrap.astype("<i8").tobytes())
            fh.write(tree.train_leaf.astype("<i4").tobytes())


def load_forest(path) -> Forest:
    raw = Path(path).read_bytes()
    if raw[:5] != _MAGIC:
        raise DataError(f"{path}: bad magic {raw[:5]!r}")
    off = 5
    head = "<IIIBdBqI"
    n_trees, depth, min_leaf, mf_code, mf_frac, crit_i, seed, n_train = \
        struct.unpack_from(head, raw, off)
    off += struct.calcsize(head)
    max_features = {0: "sqrt", 1: "all"}.get(mf_code, mf_frac)
    config = ForestConfig(n_trees=n_trees, max_depth=depth, min_samples_leaf=min_leaf,
                          max_features=max_features, criterion=CRITERIA[crit_i], seed=seed)

    def take(dtype, count):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    trees = []
    for _ in range(n_trees):
        (n_nodes,) = struct.unpack_from("<I", raw, off)
        off += 4
        trees.append(Tree(
            feature=take("<i4", n_nodes).astype(np.int32),
            threshold=take("<f8", n_nodes).astype(np.float64),
            left=take("<i4", n_nodes).astype(np.int32),
            right=take("<i4", n_nodes).astype(np.int32),
            value=take("<f8", n_nodes).astype(np.float64),
            bootstrap=take("<i8", n_train).astype(np.int64),
            train_leaf=take("<i4", n_train).astype(np.int32),
        ))
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes")
    return Forest(trees=tuple(trees), config=config, n_train=n_train)
