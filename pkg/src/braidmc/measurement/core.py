import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Optional, Tuple

import numpy as np

from ..universal import Infeasible, fraction_to_str, log2_to_str

__all__ = (
    "MAX_STATES",
    "MAX_SITES",
    "StateSet",
    "TreeNode",
    "DecisionTree",
    "build_cb_states",
    "build_str_states",
    "info_content",
    "min_depth_sum",
    "optimal_tree",
)

logger = logging.getLogger("braidmc.measurement")

MAX_STATES = 64
MAX_SITES = 256


@dataclass(frozen=True)
class StateSet:
    """Equally likely classical states of a degenerate ground-state manifold.

    args:
        states (numpy.ndarray): Occupations, shape (k, M)
        labels (tuple): Name per state
        L (int): Linear size of the underlying square lattice (site = y * L + x), if any

    """

    states: np.ndarray
    labels: Tuple[str, ...] = ()
    L: Optional[int] = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int8)
        if states.ndim != 2:
            raise ValueError("states must be a (k, M) array. got shape {}".format(states.shape))
        if len(states) < 2:
            raise ValueError("need at least 2 states. got {}".format(len(states)))
        if not np.isin(states, (0, 1)).all():
            raise ValueError("occupations must be 0 or 1")
        object.__setattr__(self, "states", states)
        if not self.labels:
            object.__setattr__(self, "labels", tuple("state {}".format(i) for i in range(len(states))))
        elif len(self.labels) != len(states):
            raise ValueError("need one label per state")

    @property
    def k(self):
        return len(self.states)

    @property
    def M(self):
        return self.states.shape[1]

    @property
    def probabilities(self):
        return (Fraction(1, self.k),) * self.k

    def site_label(self, site):
        if self.L is None:
            return "site {}".format(site)
        return "site {} (x={}, y={})".format(site, site % self.L, site // self.L)


def build_cb_states(L):
    """The two checkerboard states of an L x L square lattice.

    examples:
        .. code-block:: python

            >>> build_cb_states(4).states.sum(axis=1)
            array([8, 8])

    """
    if int(L) != L or L < 2 or L % 2:
        raise ValueError("checkerboard states need an even L >= 2. got {}".format(L))
    x, y = np.meshgrid(np.arange(L), np.arange(L))
    a = ((x + y) % 2 == 0).astype(np.int8).ravel()
    return StateSet(np.array([a, 1 - a]), labels=("checkerboard A", "checkerboard B"), L=int(L))


def build_str_states(L):
    """The six stripe states at filling 1/3: occupied columns x = s mod 3, then occupied rows y = s mod 3."""
    if int(L) != L or L < 3 or L % 3:
        raise ValueError("stripe states need L divisible by 3. got {}".format(L))
    x, y = np.meshgrid(np.arange(L), np.arange(L))
    states = []
    labels = []
    for name, coord in (("columns", x), ("rows", y)):
        for s in range(3):
            states.append((coord % 3 == s).astype(np.int8).ravel())
            labels.append("{} s={}".format(name, s))
    return StateSet(np.array(states), labels=tuple(labels), L=int(L))


def info_content(state_set):
    """Shannon information -sum p log2 p of the uniform set, in bits (log2 k)."""
    return float(np.log2(state_set.k))


def min_depth_sum(k):
    """Smallest sum of leaf depths of a binary tree with k leaves.

    With q = floor(log2 k) this is k q + 2 (k - 2**q); divided by k it is the
    expected depth of a Huffman code for k equally likely symbols.
    """
    if k <= 1:
        return 0
    q = k.bit_length() - 1
    return k * q + 2 * (k - 2 ** q)


@dataclass
class TreeNode:
    """Internal nodes query ``site``; leaves carry the index of the identified ``state``."""

    site: Optional[int] = None
    children: Dict[int, "TreeNode"] = field(default_factory=dict)
    state: Optional[int] = None

    @property
    def is_leaf(self):
        return self.state is not None

    def to_dict(self):
        if self.is_leaf:
            return {"state": self.state}
        return {"site": self.site, "children": {str(n): c.to_dict() for n, c in sorted(self.children.items())}}


@dataclass
class DecisionTree:
    """Site-measurement tree identifying each state of ``state_set`` at exactly one leaf."""

    root: TreeNode
    state_set: StateSet

    def leaf_depths(self):
        """state index -> depth"""
        depths = {}
        stack = [(self.root, 0)]
        while stack:
            node, depth = stack.pop()
            if node.is_leaf:
                depths[node.state] = depth
            else:
                stack.extend((c, depth + 1) for c in node.children.values())
        return depths

    def depth_profile(self):
        """depth -> number of leaves"""
        profile = {}
        for d in self.leaf_depths().values():
            profile[d] = profile.get(d, 0) + 1
        return dict(sorted(profile.items()))

    @property
    def expected_depth(self):
        return Fraction(sum(self.leaf_depths().values()), self.state_set.k)

    def classify(self, occupations):
        """Follow the measured occupations down the tree; returns the state index at the leaf."""
        node = self.root
        while not node.is_leaf:
            n = int(occupations[node.site])
            if n not in node.children:
                raise ValueError("no branch for n={} at {}".format(n, self.state_set.site_label(node.site)))
            node = node.children[n]
        return node.state

    def validate(self):
        """Replay every state through the tree; raises ValueError if the tree is not valid."""
        depths = self.leaf_depths()
        if sorted(depths) != list(range(self.state_set.k)):
            raise ValueError("leaves do not cover every state exactly once")
        for i, occupations in enumerate(self.state_set.states):
            if self.classify(occupations) != i:
                raise ValueError("state {} ends at a wrong leaf".format(i))
        return True

    def to_dict(self):
        k = self.state_set.k
        return {
            "states": list(self.state_set.labels),
            "n_states": k,
            "info": log2_to_str(k),
            "info_bits": info_content(self.state_set),
            "expected_measurements": fraction_to_str(self.expected_depth),
            "depth_profile": {str(d): n for d, n in self.depth_profile().items()},
            "tree": self.root.to_dict(),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def to_text(self, indent="    "):
        """Indented flowchart, one line per node."""
        lines = []

        def _walk(node, level, prefix):
            pad = indent * level
            if node.is_leaf:
                lines.append("{}{}-> {}".format(pad, prefix, self.state_set.labels[node.state]))
                return
            lines.append("{}{}measure {}".format(pad, prefix, self.state_set.site_label(node.site)))
            for n, child in sorted(node.children.items()):
                _walk(child, level + 1, "n={}: ".format(n))

        _walk(self.root, 0, "")
        return "\n".join(lines)


def optimal_tree(state_set, sites=None):
    """Site-measurement decision tree with the smallest expected number of measurements.

    Exact branch and bound over subsets of still-possible states. Sites that
    split a subset identically are tried once (lowest index); candidates are
    tried from the most balanced split down and pruned with the Huffman bound
    :func:`min_depth_sum`. Among optimal roots the lowest site index wins, so
    the result is deterministic.

    args:
        state_set (StateSet): States, at most 64 over at most 256 sites
        sites (list): Sites that may be measured. Default is every site.

    returns:
        (tuple): (DecisionTree, expected depth as Fraction)

    examples:
        .. code-block:: python

            >>> tree, depth = optimal_tree(build_str_states(6))
            >>> depth
            Fraction(8, 3)

    """
    k, M = state_set.k, state_set.M
    if k > MAX_STATES or M > MAX_SITES:
        raise ValueError(
            "search limited to {} states on {} sites. got {} on {}".format(MAX_STATES, MAX_SITES, k, M)
        )
    sites = list(range(M)) if sites is None else sorted(set(int(s) for s in sites))
    columns = state_set.states[:, sites].T.astype(bool)
    memo = {}

    def _search(subset):
        if len(subset) == 1:
            return 0, None
        if subset in memo:
            return memo[subset]
        members = np.array(sorted(subset))
        partitions = {}
        for column, site in zip(columns[:, members], sites):
            n_ones = int(column.sum())
            if n_ones == 0 or n_ones == len(members):
                continue
            # a split and its complement are the same partition
            key = (column ^ column[0]).tobytes()
            if key not in partitions:
                ones = frozenset(members[column].tolist())
                partitions[key] = (site, subset - ones, ones)
        if not partitions:
            raise Infeasible(
                "states {} agree on every measurable site".format(
                    [state_set.labels[i] for i in sorted(subset)]
                )
            )
        candidates = sorted(partitions.values(), key=lambda c: (abs(len(c[1]) - len(c[2])), c[0]))
        best = None
        for site, zeros, ones in candidates:
            bound = len(subset) + min_depth_sum(len(zeros)) + min_depth_sum(len(ones))
            if best is not None and bound > best[0]:
                continue
            cost = len(subset) + _search(zeros)[0] + _search(ones)[0]
            if best is None or cost < best[0] or (cost == best[0] and site < best[1][0]):
                best = (cost, (site, zeros, ones))
        memo[subset] = best
        return best

    def _build(subset):
        if len(subset) == 1:
            return TreeNode(state=next(iter(subset)))
        _, (site, zeros, ones) = _search(subset)
        return TreeNode(site=site, children={0: _build(zeros), 1: _build(ones)})

    everything = frozenset(range(k))
    total, _ = _search(everything)
    tree = DecisionTree(root=_build(everything), state_set=state_set)
    logger.debug("optimal_tree: %d states, %d subsets searched, depth sum %d", k, len(memo), total)
    return tree, Fraction(total, k)
