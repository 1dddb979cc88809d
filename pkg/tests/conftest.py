import pytest

from abiforest import data as dat
from abiforest import forest as fr


def chain_tree_record(depth: int, centroid=(0.0,), size: int = 1) -> dict:
    """A degenerate tree whose x=0 query walks `depth` left edges to a leaf.

    Splits are on feature 0 at threshold 10, so any query with x0 <= 10
    follows the left chain; right children are size-1 leaves.
    """
    d = len(centroid)
    leaf = {"size": size, "depth": depth, "centroid": list(centroid)}
    node = leaf
    for level in range(depth - 1, -1, -1):
        node = {
            "q": 0,
            "p": 10.0,
            "left": node,
            "right": {"size": 1, "depth": level + 1, "centroid": [100.0] * d},
        }
    return node


def forest_from_chains(depths, psi=2, centroid=(0.0,), sizes=None) -> fr.IsolationForest:
    """Forest of chain trees with prescribed leaf depths for x <= 10 queries."""
    sizes = sizes or [1] * len(depths)
    record = {
        "seed": 0,
        "psi": psi,
        "height_limit": max(max(depths), 1),
        "n_features": len(centroid),
        "trees": [chain_tree_record(dep, centroid, size) for dep, size in zip(depths, sizes)],
    }
    return fr.forest_from_dict(record)


@pytest.fixture
def small_circle() -> dat.Dataset:
    return dat.gen_circle(200, 40, seed=11)


@pytest.fixture
def tiny_forest(small_circle) -> fr.IsolationForest:
    return fr.build_forest(small_circle, 25, psi=64, seed=17)
