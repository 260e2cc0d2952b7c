"""Per-packet fallback forest: fit, integerize, infer, serialize.

A 2-tree depth-9 random forest over (length, ttl, tos, tcp_offset,
protocol).  Thresholds are floored to integers, which preserves every
split decision on integer-valued features (x <= 3.5 iff x <= 3), so the
exported model replays identically in the engine.
"""

from __future__ import annotations

import numpy as np

FEATURES = ("length", "ttl", "tos", "tcp_offset", "protocol")


def train_fallback_tree(features: np.ndarray, labels: np.ndarray, n_classes: int,
                        n_trees: int = 2, max_depth: int = 9, seed: int = 0) -> dict:
    """Fit and return the tree-model JSON section (engine format)."""
    from sklearn.ensemble import RandomForestClassifier

    if np.unique(labels).size < 2:
        raise ValueError("need at least two classes to fit the fallback forest")
    clf = RandomForestClassifier(
        n_estimators=n_trees, max_depth=max_depth, random_state=seed, bootstrap=True
    )
    clf.fit(features, labels)
    trees = [_convert_tree(est.tree_, clf.classes_, n_classes) for est in clf.estimators_]
    return {
        "n_classes": n_classes,
        "max_depth": max_depth,
        "features": list(FEATURES),
        "trees": trees,
    }


def _convert_tree(tree, classes, n_classes) -> list[dict]:
    nodes = []
    remap = {}

    def walk(i: int) -> int:
        my = len(nodes)
        nodes.append(None)
        if tree.children_left[i] < 0:  # leaf
            # value rows are class proportions; scale by the (bootstrap)
            # weighted sample count to get integer votes
            votes = [0] * n_classes
            weight = float(tree.weighted_n_node_samples[i])
            for cls, frac in zip(classes, tree.value[i][0]):
                votes[int(cls)] = int(round(float(frac) * weight))
            nodes[my] = {"votes": votes}
            return my
        left = walk(tree.children_left[i])
        right = walk(tree.children_right[i])
        nodes[my] = {
            "feature": int(tree.feature[i]),
            "threshold": int(np.floor(tree.threshold[i])),
            "left": left,
            "right": right,
        }
        return my

    walk(0)
    return nodes


def infer(model_doc: dict, fields: dict) -> int:
    """Trainer-side inference, same rule the engine uses: sum leaf votes
    across trees, argmax, ties to the lowest class index."""
    fv = [int(fields.get(name, 0)) for name in model_doc["features"]]
    totals = [0] * model_doc["n_classes"]
    for nodes in model_doc["trees"]:
        node = nodes[0]
        while "votes" not in node:
            node = nodes[node["left"] if fv[node["feature"]] <= node["threshold"] else node["right"]]
        for c, v in enumerate(node["votes"]):
            totals[c] += v
    return totals.index(max(totals))
