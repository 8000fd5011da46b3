"""Dataset files and the preprocessed hop-mask sidecar.

Dataset format: one JSON object per line with fields ``num_nodes``, ``edges``
(array of [u, v] pairs), ``node_feat`` (array of ints for categorical ids, or
array of float arrays for vector features), and optional ``label`` (number,
or an array of per-node class ids with -1 for unlabeled nodes).

Sidecar format (version 1, all little-endian), holding one hop partition per
graph as CSR-style index lists:

    magic  b"GREDMASK"
    u32    version
    u32    K (hop limit the partitions were computed with)
    u32    number of graphs
    per graph:
        u32  n  (node count)
        u32  nnz (total hop-list entries)
        u32  offsets[n*(K+1) + 1]   row r = v*(K+1) + k spans
                                    indices[offsets[r]:offsets[r+1]]
        u32  indices[nnz]           node indices, ascending within a row

Eccentricities are not stored; they are recovered as the largest k with a
non-empty hop list per node. Writing is deterministic: rerunning preprocess
on the same inputs produces byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ValidationError
from .graphs import Graph, HopPartition, all_pairs_shortest_distances, hop_partition

MASK_MAGIC = b"GREDMASK"
MASK_VERSION = 1


# ---------------------------------------------------------------------------
# JSONL datasets


def _graph_to_obj(g: Graph) -> dict:
    obj = {"num_nodes": g.num_nodes, "edges": [[u, v] for u, v in g.edges]}
    if g.node_ids is not None:
        obj["node_feat"] = [int(i) for i in g.node_ids]
    elif g.node_feat is not None:
        obj["node_feat"] = [[float(x) for x in row] for row in g.node_feat]
    else:
        raise ValidationError("graph has no node features")
    if g.node_labels is not None and np.any(g.node_labels >= 0):
        obj["label"] = [int(x) for x in g.node_labels]
    elif g.graph_label is not None:
        obj["label"] = g.graph_label
    return obj


def _graph_from_obj(obj: dict, vocab_size: int | None) -> Graph:
    feat = obj["node_feat"]
    node_ids = node_feat = None
    if feat and isinstance(feat[0], list):
        node_feat = np.asarray(feat, dtype=np.float64)
    else:
        node_ids = np.asarray(feat, dtype=np.int64)
    label = obj.get("label")
    graph_label = None
    node_labels = None
    if isinstance(label, list):
        node_labels = np.asarray(label, dtype=np.int64)
        labeled = node_labels[node_labels >= 0]
        if labeled.size == 1:
            graph_label = int(labeled[0])
    elif label is not None:
        graph_label = label
    return Graph(
        num_nodes=obj["num_nodes"],
        edges=tuple(tuple(e) for e in obj["edges"]),
        node_ids=node_ids,
        node_feat=node_feat,
        vocab_size=vocab_size,
        graph_label=graph_label,
        node_labels=node_labels,
    )


def write_dataset(path, graphs: list[Graph]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for g in graphs:
            f.write(json.dumps(_graph_to_obj(g), sort_keys=True, separators=(",", ":")))
            f.write("\n")


def read_dataset(path, vocab_size: int | None = None) -> list[Graph]:
    graphs = []
    kinds = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{line_no}: bad JSON ({e})") from e
            g = _graph_from_obj(obj, vocab_size)
            kinds.add("ids" if g.node_ids is not None else "vec")
            graphs.append(g)
    if len(kinds) > 1:
        raise ValidationError(f"{path}: mixed categorical and vector features")
    if vocab_size is None and graphs and graphs[0].node_ids is not None:
        vocab = int(max(g.node_ids.max(initial=0) for g in graphs)) + 1
        graphs = [
            Graph(g.num_nodes, g.edges, node_ids=g.node_ids, vocab_size=vocab,
                  graph_label=g.graph_label, node_labels=g.node_labels)
            for g in graphs
        ]
    return graphs


# ---------------------------------------------------------------------------
# hop-mask sidecar


def sidecar_path(dataset_path) -> str:
    return str(dataset_path) + ".masks"


def _partition_rows(part: HopPartition) -> tuple[np.ndarray, np.ndarray]:
    kk = part.k_max + 1
    n = len(part.hops)
    lengths = np.zeros(n * kk, dtype=np.uint32)
    chunks = []
    for v, per_v in enumerate(part.hops):
        for k, members in enumerate(per_v):
            lengths[v * kk + k] = len(members)
            chunks.append(np.asarray(sorted(members), dtype=np.uint32))
    offsets = np.zeros(n * kk + 1, dtype=np.uint32)
    np.cumsum(lengths, out=offsets[1:])
    indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint32)
    return offsets, indices


def write_masks(path, partitions: list[HopPartition], k_max: int) -> None:
    with open(path, "wb") as f:
        f.write(MASK_MAGIC)
        f.write(struct.pack("<III", MASK_VERSION, k_max, len(partitions)))
        for part in partitions:
            if part.k_max != k_max:
                raise ValidationError("partition K does not match sidecar K")
            offsets, indices = _partition_rows(part)
            f.write(struct.pack("<II", len(part.hops), len(indices)))
            f.write(offsets.astype("<u4").tobytes())
            f.write(indices.astype("<u4").tobytes())


def read_masks(path) -> tuple[int, list[HopPartition]]:
    try:
        f = open(path, "rb")
    except FileNotFoundError:
        raise ValidationError(
            f"mask sidecar {path} not found; run `gred preprocess` on the dataset first"
        ) from None
    with f:
        if f.read(len(MASK_MAGIC)) != MASK_MAGIC:
            raise ValidationError(f"{path}: not a mask sidecar file")
        version, k_max, n_graphs = struct.unpack("<III", f.read(12))
        if version != MASK_VERSION:
            raise ValidationError(f"{path}: unsupported sidecar version {version}")
        kk = k_max + 1
        parts = []
        for _ in range(n_graphs):
            n, nnz = struct.unpack("<II", f.read(8))
            offsets = np.frombuffer(f.read(4 * (n * kk + 1)), dtype="<u4")
            indices = np.frombuffer(f.read(4 * nnz), dtype="<u4")
            hops = []
            ecc = np.zeros(n, dtype=np.int64)
            for v in range(n):
                per_v = []
                for k in range(kk):
                    r = v * kk + k
                    members = indices[offsets[r]:offsets[r + 1]].astype(np.int64).tolist()
                    per_v.append(members)
                    if members:
                        ecc[v] = k
                hops.append(per_v)
            parts.append(HopPartition(k_max=k_max, hops=hops, ecc=ecc))
        return k_max, parts


def truncate_partition(part: HopPartition, k_max: int) -> HopPartition:
    """Restrict a partition to a smaller hop limit."""
    if k_max > part.k_max:
        raise ValidationError(
            f"masks were preprocessed with K={part.k_max}, model needs K={k_max}; "
            "re-run preprocess with a larger K"
        )
    if k_max == part.k_max:
        return part
    hops = [per_v[: k_max + 1] for per_v in part.hops]
    ecc = np.minimum(part.ecc, k_max)
    return HopPartition(k_max=k_max, hops=hops, ecc=ecc)


def preprocess_dataset(graphs: list[Graph], k_max: int, threads: int = 1) -> list[HopPartition]:
    """Compute hop partitions for every graph (the persisted "masks")."""
    if k_max < 1:
        raise ValidationError(f"preprocess needs K >= 1, got {k_max}")
    parts = []
    for g in graphs:
        dist = all_pairs_shortest_distances(g, threads=threads)
        parts.append(hop_partition(dist, k_max))
    return parts
