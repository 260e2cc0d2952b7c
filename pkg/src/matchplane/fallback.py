"""Per-packet decision forest used when a packet has no usable flow state.

The model sees only single-packet header fields (packet length, TTL, type
of service, TCP offset, protocol by default), with integer thresholds, so
inference is stateless and needs no flow features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

DEFAULT_FEATURES = ("length", "ttl", "tos", "tcp_offset", "protocol")


@dataclass(frozen=True)
class TreeNode:
    """Internal node: go left when feature value <= threshold."""

    feature: int
    threshold: int
    left: int
    right: int


@dataclass(frozen=True)
class TreeLeaf:
    votes: tuple[int, ...]


@dataclass
class TreeModel:
    """A small forest; node 0 of each tree is its root."""

    n_classes: int
    max_depth: int
    features: tuple[str, ...] = DEFAULT_FEATURES
    trees: list[list[TreeNode | TreeLeaf]] = field(default_factory=list)

    def __post_init__(self):
        self.features = tuple(self.features)
        for tree in self.trees:
            for node in tree:
                if isinstance(node, TreeNode) and not 0 <= node.feature < len(self.features):
                    raise ValueError(
                        f"node references feature {node.feature}, schema has "
                        f"{len(self.features)} features"
                    )
                if isinstance(node, TreeLeaf) and len(node.votes) != self.n_classes:
                    raise ValueError("leaf vote vector length must equal n_classes")

    def depth_of(self, tree: list[TreeNode | TreeLeaf], idx: int = 0) -> int:
        node = tree[idx]
        if isinstance(node, TreeLeaf):
            return 0
        return 1 + max(self.depth_of(tree, node.left), self.depth_of(tree, node.right))

    def check_depth(self):
        for t, tree in enumerate(self.trees):
            d = self.depth_of(tree)
            if d > self.max_depth:
                raise ValueError(f"tree {t} has depth {d} > declared max {self.max_depth}")


def feature_vector(model: TreeModel, fields: Mapping[str, int]) -> list[int]:
    """Missing fields default to 0 (e.g. tcp_offset on non-TCP packets)."""
    return [int(fields.get(name, 0)) for name in model.features]


def infer_packet(model: TreeModel, fields: Mapping[str, int]) -> int:
    """Sum leaf votes across trees; argmax, ties to the lowest class index."""
    fv = feature_vector(model, fields)
    totals = [0] * model.n_classes
    for tree in model.trees:
        node = tree[0]
        hops = 0
        while isinstance(node, TreeNode):
            node = tree[node.left if fv[node.feature] <= node.threshold else node.right]
            hops += 1
            if hops > model.max_depth:
                raise AssertionError("tree deeper than its declared bound")
        for c, v in enumerate(node.votes):
            totals[c] += v
    best = max(totals)
    return totals.index(best)


def constant_model(n_classes: int, cls: int) -> TreeModel:
    """Single-leaf forest that always answers ``cls`` (test/demo helper)."""
    return TreeModel(
        n_classes=n_classes,
        max_depth=0,
        trees=[[TreeLeaf(tuple(1 if c == cls else 0 for c in range(n_classes)))]],
    )


def model_to_json(model: TreeModel) -> dict:
    trees = []
    for tree in model.trees:
        nodes = []
        for node in tree:
            if isinstance(node, TreeNode):
                nodes.append(
                    {
                        "feature": node.feature,
                        "threshold": node.threshold,
                        "left": node.left,
                        "right": node.right,
                    }
                )
            else:
                nodes.append({"votes": list(node.votes)})
        trees.append(nodes)
    return {
        "n_classes": model.n_classes,
        "max_depth": model.max_depth,
        "features": list(model.features),
        "trees": trees,
    }


def model_from_json(doc: dict) -> TreeModel:
    trees: list[list[TreeNode | TreeLeaf]] = []
    for nodes in doc["trees"]:
        tree: list[TreeNode | TreeLeaf] = []
        for node in nodes:
            if "votes" in node:
                tree.append(TreeLeaf(tuple(int(v) for v in node["votes"])))
            else:
                tree.append(
                    TreeNode(
                        feature=int(node["feature"]),
                        threshold=int(node["threshold"]),
                        left=int(node["left"]),
                        right=int(node["right"]),
                    )
                )
        trees.append(tree)
    model = TreeModel(
        n_classes=int(doc["n_classes"]),
        max_depth=int(doc["max_depth"]),
        features=tuple(doc["features"]),
        trees=trees,
    )
    model.check_depth()
    return model
