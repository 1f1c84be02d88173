"""Random trees with arbitrary node order, for SHAP oracle comparisons."""

from fibml.trees import Tree


def random_tree(rng, n_features, max_depth=4, split_prob=0.8):
    """Nodes are numbered in allocation order while recursing, not level by level."""
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def new():
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0), (cover, 0)):
            arr.append(v)
        return len(feature) - 1

    def grow(node, depth):
        if depth < max_depth and rng.random() < split_prob:
            feature[node] = int(rng.integers(0, n_features))
            threshold[node] = float(rng.normal())
            l, r = new(), new()
            left[node], right[node] = l, r
            grow(l, depth + 1)
            grow(r, depth + 1)
            cover[node] = cover[l] + cover[r]
        else:
            value[node] = float(rng.normal(scale=2.0))
            cover[node] = int(rng.integers(1, 50))

    grow(new(), 0)
    return Tree(feature, threshold, left, right, value, cover)
