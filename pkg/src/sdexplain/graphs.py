"""Graph data model, synthetic motif dataset generation, and serialization.

Graphs store *directed* edges with both orientations present for every
undirected bond.  The edge order of a graph is canonical: every per-edge
vector (masks, ground-truth flags, score variations) is aligned to it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError, DatasetFormatError
from .rng import RngStream

DATASET_VERSION = 1

# Motif templates as undirected node pairs on local nodes 0..4.
HOUSE_MOTIF = ((0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4))
CYCLE_MOTIF = ((0, 1), (1, 2), (2, 3), (3, 4), (4, 0))


@dataclass(frozen=True, eq=False)
class EdgeIncidence:
    """Dense gather/scatter structure for one graph's directed edges.

    ``scatter_src[i, e] == 1`` iff edge ``e`` starts at node ``i`` (and
    likewise for ``scatter_dst``), so message aggregation and its adjoint
    are plain matrix products.
    """

    src: np.ndarray
    dst: np.ndarray
    scatter_src: np.ndarray
    scatter_dst: np.ndarray


@dataclass(frozen=True, eq=False)
class Graph:
    """An attributed directed graph with optional edge-level ground truth."""

    node_count: int
    node_features: np.ndarray          # (node_count, feature_dim)
    edges: np.ndarray                  # (E, 2) int, directed (src, dst)
    label: int
    gt_edge_labels: np.ndarray | None = None   # (E,) 0/1

    def __post_init__(self):
        object.__setattr__(self, "node_features",
                           np.asarray(self.node_features, dtype=np.float64))
        object.__setattr__(self, "edges",
                           np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        if self.gt_edge_labels is not None:
            object.__setattr__(self, "gt_edge_labels",
                               np.asarray(self.gt_edge_labels, dtype=np.int8))
        self._validate()

    def _validate(self):
        n = self.node_count
        if self.node_features.ndim != 2 or self.node_features.shape[0] != n:
            raise DatasetFormatError(
                f"node_features shape {self.node_features.shape} does not match "
                f"node_count={n}")
        if self.edge_count and (self.edges.min() < 0 or self.edges.max() >= n):
            raise DatasetFormatError(
                f"edge endpoint out of range [0, {n}) in edge list")
        # Reverse map must be total; computing it raises otherwise.
        rev = self.reverse_index
        if self.gt_edge_labels is not None:
            if len(self.gt_edge_labels) != self.edge_count:
                raise DatasetFormatError(
                    f"gt_edge_labels has {len(self.gt_edge_labels)} entries for "
                    f"{self.edge_count} edges")
            if not np.array_equal(self.gt_edge_labels, self.gt_edge_labels[rev]):
                raise DatasetFormatError(
                    "gt_edge_labels is not symmetric under edge reversal")

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @cached_property
    def reverse_index(self) -> np.ndarray:
        """Index of (j, i) for each edge (i, j); an involution."""
        pos = {(int(s), int(d)): e for e, (s, d) in enumerate(self.edges)}
        if len(pos) != self.edge_count:
            raise DatasetFormatError("duplicate directed edge in edge list")
        rev = np.empty(self.edge_count, dtype=np.int64)
        for e, (s, d) in enumerate(self.edges):
            r = pos.get((int(d), int(s)))
            if r is None:
                raise DatasetFormatError(
                    f"edge ({int(s)}, {int(d)}) has no reverse orientation")
            rev[e] = r
        return rev

    @cached_property
    def incidence(self) -> EdgeIncidence:
        src = self.edges[:, 0].copy()
        dst = self.edges[:, 1].copy()
        s_src = np.zeros((self.node_count, self.edge_count))
        s_dst = np.zeros((self.node_count, self.edge_count))
        s_src[src, np.arange(self.edge_count)] = 1.0
        s_dst[dst, np.arange(self.edge_count)] = 1.0
        return EdgeIncidence(src=src, dst=dst, scatter_src=s_src, scatter_dst=s_dst)

    @cached_property
    def undirected_representatives(self) -> np.ndarray:
        """One edge index per undirected bond (the lower of the two indices)."""
        rev = self.reverse_index
        idx = np.arange(self.edge_count)
        return idx[idx <= rev[idx]]


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))

    def part(self, name: str) -> tuple[int, ...]:
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split part {name!r}")
        return getattr(self, name)


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple[Graph, ...]
    split: Split

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        all_idx = sorted(self.split.train + self.split.val + self.split.test)
        if all_idx != list(range(len(self.graphs))):
            raise DatasetFormatError(
                "split parts must be disjoint and cover all graph indices")

    def part_graphs(self, name: str) -> list[tuple[int, Graph]]:
        return [(i, self.graphs[i]) for i in self.split.part(name)]


@dataclass(frozen=True)
class BaMotifConfig:
    """Generator knobs for the synthetic two-motif classification task."""

    base_nodes: int = 20
    ba_attach: int = 1
    motif_p: float = 0.5          # probability of the house motif (class 1)
    feature_dim: int = 4
    feature_scheme: str = "ones"  # "ones" | "random"
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def validate(self):
        if self.base_nodes < 3:
            raise ConfigError(f"base_nodes must be >= 3, got {self.base_nodes}")
        if not (1 <= self.ba_attach < self.base_nodes):
            raise ConfigError("ba_attach must satisfy 1 <= m < base_nodes")
        if not (0.0 <= self.motif_p <= 1.0):
            raise ConfigError(f"motif_p must be in [0, 1], got {self.motif_p}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.feature_scheme not in ("ones", "random"):
            raise ConfigError(f"unknown feature_scheme {self.feature_scheme!r}")
        fr = self.split_fractions
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError("split_fractions must be 3 non-negatives summing to 1")


def _ba_tree_edges(n: int, m: int, rng: RngStream) -> list[tuple[int, int]]:
    """Barabási–Albert preferential attachment; undirected pairs."""
    edges = [(0, 1)]
    repeated = [0, 1]
    for new in range(2, n):
        targets: set[int] = set()
        while len(targets) < min(m, new):
            targets.add(int(repeated[rng.integers(0, len(repeated))]))
        for t in sorted(targets):
            edges.append((new, t))
            repeated.extend((new, t))
    return edges


def _directed(pairs: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    for a, b in pairs:
        out.append((a, b))
        out.append((b, a))
    return out


def _make_motif_graph(label: int, cfg: BaMotifConfig, rng: RngStream) -> Graph:
    base = _ba_tree_edges(cfg.base_nodes, cfg.ba_attach, rng)
    motif = HOUSE_MOTIF if label == 1 else CYCLE_MOTIF
    off = cfg.base_nodes
    motif_pairs = [(a + off, b + off) for a, b in motif]
    bridge = (int(rng.integers(0, cfg.base_nodes)),
              off + int(rng.integers(0, 5)))
    pairs = base + motif_pairs + [bridge]
    edges = np.asarray(_directed(pairs), dtype=np.int64)
    n = cfg.base_nodes + 5

    gt = np.zeros(len(edges), dtype=np.int8)
    lo = 2 * len(base)
    gt[lo:lo + 2 * len(motif_pairs)] = 1   # motif-internal edges only; bridge excluded

    if cfg.feature_scheme == "ones":
        feats = np.ones((n, cfg.feature_dim))
    else:
        feats = rng.uniform(size=(n, cfg.feature_dim))
    return Graph(node_count=n, node_features=feats, edges=edges,
                 label=label, gt_edge_labels=gt)


def generate_ba2motifs(n_graphs: int, seed: int,
                       params: BaMotifConfig | None = None) -> Dataset:
    """Generate a balanced two-class motif dataset.

    Class 1 graphs carry a house motif, class 0 a five-cycle, each attached
    to a preferential-attachment base by a single bridge edge.  Ground
    truth marks exactly the motif-internal directed edges.  Deterministic
    given (n_graphs, seed, params).
    """
    cfg = params or BaMotifConfig()
    cfg.validate()
    if n_graphs < 2:
        raise ConfigError(f"n_graphs must be >= 2, got {n_graphs}")

    root = RngStream(seed)
    n_house = int(round(n_graphs * cfg.motif_p))
    labels = np.array([1] * n_house + [0] * (n_graphs - n_house), dtype=np.int64)
    labels = labels[root.child(n_graphs).permutation(n_graphs)]

    graphs = [_make_motif_graph(int(labels[i]), cfg, root.child(i))
              for i in range(n_graphs)]

    order = root.child(n_graphs + 1).permutation(n_graphs)
    n_tr = int(n_graphs * cfg.split_fractions[0])
    n_va = int(n_graphs * cfg.split_fractions[1])
    split = Split(train=order[:n_tr], val=order[n_tr:n_tr + n_va],
                  test=order[n_tr + n_va:])
    return Dataset(graphs=tuple(graphs), split=split)


def edge_neighbors(graph: Graph) -> list[np.ndarray]:
    """Edges sharing an endpoint with each edge, minus itself and its reverse."""
    E = graph.edge_count
    rev = graph.reverse_index
    touching: list[list[int]] = [[] for _ in range(graph.node_count)]
    for e, (s, d) in enumerate(graph.edges):
        touching[int(s)].append(e)
        touching[int(d)].append(e)
    out = []
    for e in range(E):
        s, d = graph.edges[e]
        cand = set(touching[int(s)]) | set(touching[int(d)])
        cand.discard(e)
        cand.discard(int(rev[e]))
        out.append(np.array(sorted(cand), dtype=np.int64))
    return out


def check_mask(graph: Graph, mask: np.ndarray) -> np.ndarray:
    """Validate a per-edge mask against its graph; returns a float array."""
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (graph.edge_count,):
        raise AlignmentError(
            f"mask has shape {m.shape}, graph has {graph.edge_count} directed edges")
    if m.size and (m.min() < -1e-12 or m.max() > 1 + 1e-12):
        raise AlignmentError("mask values must lie in [0, 1]")
    return m


def symmetrize_mask(graph: Graph, mask: np.ndarray) -> np.ndarray:
    """Average each edge's value with its reverse orientation; idempotent."""
    m = check_mask(graph, mask)
    return (m + m[graph.reverse_index]) / 2.0


def _graph_to_record(g: Graph) -> dict:
    return {
        "num_nodes": g.node_count,
        "features": g.node_features.tolist(),
        "edges": [[int(s), int(d)] for s, d in g.edges],
        "gt_edge_labels": None if g.gt_edge_labels is None
        else [int(v) for v in g.gt_edge_labels],
        "label": int(g.label),
    }


def _graph_from_record(rec: dict, index: int) -> Graph:
    try:
        n = int(rec["num_nodes"])
        feats = np.asarray(rec["features"], dtype=np.float64)
        edges = np.asarray(rec["edges"], dtype=np.int64)
        gt = rec.get("gt_edge_labels")
        label = int(rec["label"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"graph record {index}: {exc}") from exc
    try:
        return Graph(node_count=n, node_features=feats,
                     edges=edges, label=label,
                     gt_edge_labels=None if gt is None else np.asarray(gt))
    except DatasetFormatError as exc:
        raise DatasetFormatError(f"graph record {index}: {exc}") from exc


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    doc = {
        "version": DATASET_VERSION,
        "graphs": [_graph_to_record(g) for g in dataset.graphs],
        "split": {"train": list(dataset.split.train),
                  "val": list(dataset.split.val),
                  "test": list(dataset.split.test)},
    }
    Path(path).write_text(json.dumps(doc))


def load_dataset(path: str | Path) -> Dataset:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: invalid or truncated JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("version") != DATASET_VERSION:
        raise DatasetFormatError(
            f"{path}: expected a version-{DATASET_VERSION} dataset document")
    try:
        graphs = [_graph_from_record(rec, i) for i, rec in enumerate(doc["graphs"])]
        split = Split(**doc["split"])
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
    return Dataset(graphs=tuple(graphs), split=split)
