"""Dataset containers, plain-text interchange formats, and adjacency math.

Three dataset families are supported:

* node-classification graphs (``GraphBundle``), stored as a directory of
  small CSV files plus a key-value meta file;
* molecular sets (``MolecularSet``), stored as one JSON object per line;
* 3D point scenes (``SceneSample``), stored as a directory of CSVs.

Every loader validates eagerly and raises :class:`FormatError` with the
offending file (and line, where meaningful), so a broken dataset fails
before any training starts. Bundle members may be gzip-compressed
(``features.csv.gz`` is found wherever ``features.csv`` is expected).
"""

from __future__ import annotations

import gzip
import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

SPLIT_TAGS = ("train", "val", "test", "none")

BUNDLE_META = "meta.txt"
BUNDLE_FEATURES = "features.csv"
BUNDLE_LABELS = "labels.csv"
BUNDLE_EDGES = "edges.csv"
BUNDLE_SPLITS = "splits.csv"


class FormatError(ValueError):
    """A dataset file is missing, malformed, or internally inconsistent."""


def _open_member(directory: str, name: str):
    """Open a text member, transparently falling back to ``<name>.gz``."""
    path = os.path.join(directory, name)
    if os.path.exists(path):
        return open(path, "r", encoding="utf-8"), path
    gz = path + ".gz"
    if os.path.exists(gz):
        return gzip.open(gz, "rt", encoding="utf-8"), gz
    raise FormatError(f"missing {name} (or {name}.gz) in {directory}")


# -- node-classification bundles ------------------------------------------


@dataclass
class GraphBundle:
    """A node-classification dataset over a single graph.

    ``edges`` always holds the directed expansion in canonical order:
    construction symmetrizes undirected input, removes duplicates, and
    sorts pairs, so two bundles with the same content compare equal.
    ``split`` tags each node train/val/test, or ``none`` for nodes
    outside every partition (semi-supervised datasets leave most nodes
    unlabeled for training purposes).
    """

    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    split: np.ndarray
    num_classes: int
    directed: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype="U5")
        pairs = {(int(a), int(b)) for a, b in np.asarray(self.edges).reshape(-1, 2)}
        if not self.directed:
            pairs |= {(b, a) for a, b in pairs}
        self.edges = (
            np.array(sorted(pairs), dtype=np.int64)
            if pairs
            else np.zeros((0, 2), dtype=np.int64)
        )
        self._check()

    def _check(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise FormatError("features must be a 2-D matrix")
        if self.labels.shape != (n,):
            raise FormatError(
                f"{self.labels.shape[0]} labels for {n} feature rows"
            )
        if self.split.shape != (n,):
            raise FormatError(f"{self.split.shape[0]} split tags for {n} nodes")
        bad = set(self.split) - set(SPLIT_TAGS)
        if bad:
            raise FormatError(f"unknown split tags {sorted(bad)}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(
                f"labels outside [0, {self.num_classes})"
            )
        if self.edges.size and (
            self.edges.min() < 0 or self.edges.max() >= n
        ):
            raise FormatError(f"edge endpoint outside [0, {n})")

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def split_indices(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.split == tag)

    def require_training_splits(self) -> None:
        for tag in ("train", "val", "test"):
            if not (self.split == tag).any():
                raise FormatError(f"bundle has an empty {tag!r} partition")


def load_graph_bundle(path: str) -> GraphBundle:
    """Read a bundle directory; see the module docstring for the layout."""
    if not os.path.isdir(path):
        raise FormatError(f"{path} is not a bundle directory")
    meta = _load_meta(path)
    n = meta["num_nodes"]
    num_classes = meta["num_classes"]
    directed = meta["directed"]

    fh, fpath = _open_member(path, BUNDLE_FEATURES)
    with fh:
        try:
            features = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
        except ValueError as e:
            raise FormatError(f"{fpath}: {e}") from None
    if features.shape[0] != n:
        raise FormatError(
            f"{fpath}: {features.shape[0]} rows, meta says {n} nodes"
        )

    labels = _load_int_column(path, BUNDLE_LABELS, n)

    fh, epath = _open_member(path, BUNDLE_EDGES)
    edges = []
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError(f"{epath}:{lineno}: expected 'src,dst'")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(
                    f"{epath}:{lineno}: non-integer endpoint {line!r}"
                ) from None
            if not (0 <= a < n and 0 <= b < n):
                raise FormatError(
                    f"{epath}:{lineno}: edge ({a},{b}) out of range for "
                    f"{n} nodes"
                )
            edges.append((a, b))

    fh, spath = _open_member(path, BUNDLE_SPLITS)
    split = []
    with fh:
        for lineno, raw in enumerate(fh, 1):
            tag = raw.strip()
            if not tag:
                continue
            if tag not in SPLIT_TAGS:
                raise FormatError(
                    f"{spath}:{lineno}: unknown split tag {tag!r}"
                )
            split.append(tag)
    if len(split) != n:
        raise FormatError(f"{spath}: {len(split)} tags, meta says {n} nodes")

    try:
        return GraphBundle(
            features=features,
            labels=labels,
            edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
            split=np.array(split),
            num_classes=num_classes,
            directed=directed,
        )
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


def save_graph_bundle(bundle: GraphBundle, path: str, compress=()) -> None:
    """Write a bundle directory. Members named in ``compress`` are
    gzipped (large feature matrices shrink dramatically)."""
    os.makedirs(path, exist_ok=True)

    def writer(name):
        target = os.path.join(path, name)
        if name in compress:
            return gzip.open(target + ".gz", "wt", encoding="utf-8")
        return open(target, "w", encoding="utf-8")

    with writer(BUNDLE_META) as fh:
        fh.write(f"num_nodes = {bundle.num_nodes}\n")
        fh.write(f"num_classes = {bundle.num_classes}\n")
        fh.write(f"directed = {'true' if bundle.directed else 'false'}\n")
    with writer(BUNDLE_FEATURES) as fh:
        np.savetxt(fh, bundle.features, delimiter=",", fmt="%.17g")
    with writer(BUNDLE_LABELS) as fh:
        np.savetxt(fh, bundle.labels, fmt="%d")
    with writer(BUNDLE_EDGES) as fh:
        if bundle.directed:
            pairs = [tuple(e) for e in bundle.edges]
        else:
            pairs = sorted({(min(a, b), max(a, b)) for a, b in bundle.edges})
        for a, b in pairs:
            fh.write(f"{a},{b}\n")
    with writer(BUNDLE_SPLITS) as fh:
        for tag in bundle.split:
            fh.write(f"{tag}\n")


def _load_meta(path: str) -> dict:
    fh, mpath = _open_member(path, BUNDLE_META)
    entries = {}
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{mpath}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            entries[key] = value
    out = {}
    for key in ("num_nodes", "num_classes"):
        if key not in entries:
            raise FormatError(f"{mpath}: missing {key}")
        try:
            out[key] = int(entries[key])
        except ValueError:
            raise FormatError(f"{mpath}: {key} must be an integer") from None
    flag = entries.get("directed", "false").lower()
    if flag not in ("true", "false"):
        raise FormatError(f"{mpath}: directed must be true or false")
    out["directed"] = flag == "true"
    unknown = set(entries) - {"num_nodes", "num_classes", "directed"}
    if unknown:
        raise FormatError(f"{mpath}: unknown keys {sorted(unknown)}")
    return out


def _load_int_column(directory: str, name: str, expected: int) -> np.ndarray:
    fh, path = _open_member(directory, name)
    values = []
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError:
                raise FormatError(
                    f"{path}:{lineno}: expected an integer, got {line!r}"
                ) from None
    if len(values) != expected:
        raise FormatError(f"{path}: {len(values)} rows, expected {expected}")
    return np.array(values, dtype=np.int64)


# -- molecular sets --------------------------------------------------------


@dataclass
class MolecularGraph:
    """One small graph: per-node features, undirected bonds, binary label."""

    node_features: np.ndarray
    edges: np.ndarray
    label: int

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.node_features.ndim != 2 or self.node_features.shape[0] == 0:
            raise FormatError("molecular graph must have a non-empty 2-D "
                              "feature matrix")
        if self.label not in (0, 1):
            raise FormatError(f"molecular label must be 0 or 1, got {self.label}")
        n = self.node_features.shape[0]
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise FormatError(f"bond endpoint outside [0, {n})")

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]


@dataclass
class MolecularSet:
    graphs: list
    split: np.ndarray

    def __post_init__(self):
        self.split = np.asarray(self.split, dtype="U5")
        if len(self.split) != len(self.graphs):
            raise FormatError("one split tag per graph required")
        bad = set(self.split) - set(SPLIT_TAGS)
        if bad:
            raise FormatError(f"unknown split tags {sorted(bad)}")
        widths = {g.node_features.shape[1] for g in self.graphs}
        if len(widths) > 1:
            raise FormatError(f"inconsistent feature widths {sorted(widths)}")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def num_features(self) -> int:
        return self.graphs[0].node_features.shape[1] if self.graphs else 0

    def split_indices(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.split == tag)


def load_molecular_set(path: str) -> MolecularSet:
    """Read a JSON-lines molecular set (one graph object per line)."""
    graphs, split = [], []
    if os.path.isdir(path):
        raise FormatError(f"{path} is a directory, expected a JSON-lines file")
    if not os.path.exists(path):
        raise FormatError(f"missing molecular set file {path}")
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
            missing = {"node_features", "edges", "label", "split"} - set(obj)
            if missing:
                raise FormatError(
                    f"{path}:{lineno}: missing fields {sorted(missing)}"
                )
            if obj["split"] not in SPLIT_TAGS:
                raise FormatError(
                    f"{path}:{lineno}: unknown split tag {obj['split']!r}"
                )
            try:
                graphs.append(
                    MolecularGraph(
                        node_features=np.array(obj["node_features"], dtype=np.float64),
                        edges=np.array(obj["edges"], dtype=np.int64).reshape(-1, 2),
                        label=int(obj["label"]),
                    )
                )
            except (FormatError, ValueError) as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
            split.append(obj["split"])
    return MolecularSet(graphs=graphs, split=np.array(split))


def save_molecular_set(mset: MolecularSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for graph, tag in zip(mset.graphs, mset.split):
            obj = {
                "node_features": graph.node_features.tolist(),
                "edges": graph.edges.tolist(),
                "label": int(graph.label),
                "split": str(tag),
            }
            fh.write(json.dumps(obj, separators=(",", ":"), sort_keys=True))
            fh.write("\n")


# -- point scenes -----------------------------------------------------------


@dataclass
class SceneSample:
    """A 3D point scene with instance structure and relationship labels.

    ``points`` rows are (x, y, z, r, g, b, nx, ny, nz). ``instance_ids``
    assigns each point to one of m instances, numbered 1..m. The sparse
    ``edge_labels`` map holds only related ordered pairs; every absent
    off-diagonal pair is implicitly the background class 0 ("none").
    """

    points: np.ndarray
    instance_ids: np.ndarray
    node_labels: np.ndarray
    edge_labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64)
        self.node_labels = np.asarray(self.node_labels, dtype=np.int64)
        self.edge_labels = {
            (int(i), int(j)): int(p) for (i, j), p in self.edge_labels.items()
        }
        if self.points.ndim != 2 or self.points.shape[1] != 9:
            raise FormatError(
                f"points must be N x 9, got {self.points.shape}"
            )
        n = self.points.shape[0]
        if self.instance_ids.shape != (n,):
            raise FormatError("one instance id per point required")
        m = self.num_instances
        present = set(np.unique(self.instance_ids))
        expected = set(range(1, m + 1))
        if present != expected:
            raise FormatError(
                f"instance ids must cover 1..{m} with at least one point "
                f"each; got {sorted(present)}"
            )
        for (i, j), p in self.edge_labels.items():
            if i == j:
                raise FormatError(f"self-pair ({i},{i}) in edge labels")
            if not (0 <= i < m and 0 <= j < m):
                raise FormatError(f"edge label pair ({i},{j}) out of range")
            if p < 0:
                raise FormatError(f"negative predicate class at ({i},{j})")

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def num_instances(self) -> int:
        return self.node_labels.shape[0]

    def edge_label_matrix(self) -> np.ndarray:
        """Dense m x m predicate classes, background 0, diagonal -1
        (self-pairs are never supervised)."""
        m = self.num_instances
        out = np.zeros((m, m), dtype=np.int64)
        for (i, j), p in self.edge_labels.items():
            out[i, j] = p
        np.fill_diagonal(out, -1)
        return out


def load_scene(path: str) -> SceneSample:
    fh, ppath = _open_member(path, "points.csv")
    with fh:
        try:
            points = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
        except ValueError as e:
            raise FormatError(f"{ppath}: {e}") from None
    n = points.shape[0]
    instance_ids = _load_int_column(path, "instances.csv", n)
    if instance_ids.size == 0:
        raise FormatError(f"{path}: empty scene")
    m = int(instance_ids.max())
    node_labels = _load_int_column(path, "node_labels.csv", m)

    fh, epath = _open_member(path, "edge_labels.csv")
    edge_labels = {}
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise FormatError(
                    f"{epath}:{lineno}: expected 'i,j,predicate'"
                )
            try:
                i, j, p = (int(x) for x in parts)
            except ValueError:
                raise FormatError(
                    f"{epath}:{lineno}: non-integer field in {line!r}"
                ) from None
            edge_labels[(i, j)] = p
    try:
        return SceneSample(points, instance_ids, node_labels, edge_labels)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


def save_scene(sample: SceneSample, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    np.savetxt(os.path.join(path, "points.csv"), sample.points,
               delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(path, "instances.csv"), sample.instance_ids,
               fmt="%d")
    np.savetxt(os.path.join(path, "node_labels.csv"), sample.node_labels,
               fmt="%d")
    with open(os.path.join(path, "edge_labels.csv"), "w",
              encoding="utf-8") as fh:
        for (i, j), p in sorted(sample.edge_labels.items()):
            fh.write(f"{i},{j},{p}\n")


def load_scene_dataset(path: str) -> list:
    """Load every scene subdirectory under ``path``, sorted by name."""
    if not os.path.isdir(path):
        raise FormatError(f"{path} is not a scene dataset directory")
    names = sorted(
        d for d in os.listdir(path)
        if os.path.isdir(os.path.join(path, d))
    )
    if not names:
        raise FormatError(f"no scene subdirectories in {path}")
    return [load_scene(os.path.join(path, name)) for name in names]


def save_scene_dataset(samples, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    for k, sample in enumerate(samples):
        save_scene(sample, os.path.join(path, f"scene_{k:05d}"))


# -- adjacency ---------------------------------------------------------------


@dataclass
class Adjacency:
    """A binary relation structure with its normalized propagation matrix."""

    matrix: np.ndarray
    normalized: np.ndarray
    mode: str


def normalize_adjacency(a: np.ndarray, mode: str = "row") -> np.ndarray:
    """Normalize a binary adjacency after adding self-loops.

    ``row`` returns D^-1 (A + I), whose rows each sum to one; ``symmetric``
    returns D^-1/2 (A + I) D^-1/2. D is the degree of A + I, so isolated
    nodes keep self-loop mass 1 and nothing divides by zero.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise FormatError(f"adjacency must be square, got {a.shape}")
    with_loops = np.minimum(a + np.eye(a.shape[0]), 1.0)
    degree = with_loops.sum(axis=1)
    if mode == "row":
        return with_loops / degree[:, None]
    if mode == "symmetric":
        inv_sqrt = 1.0 / np.sqrt(degree)
        return with_loops * inv_sqrt[:, None] * inv_sqrt[None, :]
    raise ValueError(f"unknown normalization mode {mode!r}")


def normalize_adjacency_sparse(edges: np.ndarray, num_nodes: int,
                               mode: str = "row") -> sp.csr_matrix:
    """Sparse counterpart of :func:`normalize_adjacency` for large graphs.

    ``edges`` is a directed (src, dst) list; duplicates collapse to
    binary entries before self-loops are added.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    ones = np.ones(len(edges))
    a = sp.coo_matrix(
        (ones, (edges[:, 0], edges[:, 1])), shape=(num_nodes, num_nodes)
    ).tocsr()
    a.data[:] = 1.0  # collapse duplicate entries to a binary relation
    with_loops = a + sp.eye(num_nodes, format="csr")
    with_loops.data[:] = np.minimum(with_loops.data, 1.0)
    degree = np.asarray(with_loops.sum(axis=1)).ravel()
    if mode == "row":
        scale = sp.diags(1.0 / degree)
        return (scale @ with_loops).tocsr()
    if mode == "symmetric":
        scale = sp.diags(1.0 / np.sqrt(degree))
        return (scale @ with_loops @ scale).tocsr()
    raise ValueError(f"unknown normalization mode {mode!r}")


def adjacency_from_scene(sample: SceneSample, mode: str = "row") -> Adjacency:
    """Class-agnostic relation existence: A[i, j] = 1 iff the ordered pair
    carries a non-background predicate."""
    m = sample.num_instances
    a = np.zeros((m, m))
    for (i, j), p in sample.edge_labels.items():
        if p != 0:
            a[i, j] = 1.0
    return Adjacency(matrix=a, normalized=normalize_adjacency(a, mode),
                     mode=mode)
