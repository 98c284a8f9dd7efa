"""Greedy binary tree under the same censoring-weighted loss (CART-IPCW baseline)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from .data import SurvivalDataset
from .dsa import CandidateList, DsaConfig, Split, Workspace, sse_of
from .estimators import CensoringModel
from .loss import LossSpec
from .partition import Clause, PartitionModel, Region


@dataclass(frozen=True)
class CartConfig:
    min_node: int = 15
    min_split: int = 30
    max_leaves: int = 10
    max_cuts: int = 200


@dataclass
class TreeNode:
    clause: Clause
    sse: float
    n: int
    prediction: tuple[float, ...] = ()
    split: Split | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def leaves(self) -> Iterator["TreeNode"]:
        if self.is_leaf:
            yield self
        else:
            yield from self.left.leaves()
            yield from self.right.leaves()

    def n_leaves(self) -> int:
        return sum(1 for _ in self.leaves())

    def dump(self, schema=None, indent: int = 0) -> str:
        pad = "  " * indent
        pred = ", ".join(f"{v:.4g}" for v in self.prediction)
        if self.is_leaf:
            return f"{pad}leaf n={self.n} prediction=[{pred}]\n"
        s = self.split
        name = schema[s.covariate].name if schema is not None else f"x{s.covariate}"
        cond = f"{name} <= {s.threshold:g}" if s.threshold is not None else f"{name} in {sorted(s.left_levels)}"
        return (f"{pad}{cond} (n={self.n})\n" + self.left.dump(schema, indent + 1)
                + f"{pad}else\n" + self.right.dump(schema, indent + 1))


def _node(ws: Workspace, clause: Clause) -> TreeNode:
    st = ws.stats((clause,))
    pred = tuple(float(v) for v in st[1] / st[0]) if (st[0] > 0).all() else ()
    return TreeNode(clause, sse_of(st), int(ws.clause_mask(clause).sum()), pred)


def _workspace(data, g, loss, config: CartConfig) -> Workspace:
    dcfg = DsaConfig(max_regions=config.max_leaves, min_per_clause=config.min_node, max_cuts=config.max_cuts)
    return Workspace.from_data(data, loss, g, dcfg)


def grow_in(ws: Workspace, config: CartConfig) -> TreeNode:
    """Best-first growth: always split the leaf with the largest gain."""
    root = _node(ws, Clause())
    frontier = [root]
    n_leaves = 1
    while n_leaves < config.max_leaves:
        best = None
        for leaf in frontier:
            if leaf.n < config.min_split:
                continue
            res = ws.best_split((leaf.clause,), min_count=config.min_node, min_node=config.min_split)
            if res is not None and (best is None or res.improvement > best[1].improvement):
                best = (leaf, res)
        if best is None:
            break
        leaf, res = best
        (lo,), (hi,) = res.low, res.high
        leaf.split, leaf.gain = res.split, res.improvement
        leaf.left, leaf.right = _node(ws, lo), _node(ws, hi)
        frontier.remove(leaf)
        frontier += [leaf.left, leaf.right]
        n_leaves += 1
    return root


def grow(data: SurvivalDataset, g: CensoringModel | None, loss: LossSpec = LossSpec(),
         config: CartConfig = CartConfig()) -> TreeNode:
    data.require_events()
    return grow_in(_workspace(data, g, loss, config), config)


def _copy(node: TreeNode) -> TreeNode:
    out = TreeNode(node.clause, node.sse, node.n, node.prediction, node.split, gain=node.gain)
    if not node.is_leaf:
        out.left, out.right = _copy(node.left), _copy(node.right)
    return out


def _internal(node: TreeNode):
    if not node.is_leaf:
        yield node
        yield from _internal(node.left)
        yield from _internal(node.right)


def prune_path(tree: TreeNode) -> dict[int, TreeNode]:
    """Nested subtrees keyed by leaf count, pruning the weakest split first.

    At each step the split whose removal increases the training risk the
    least is collapsed, among splits whose children are both leaves, so the
    sequence visits every leaf count from the full tree down to the root.
    """
    current = _copy(tree)
    path = {current.n_leaves(): _copy(current)}
    while not current.is_leaf:
        cands = [nd for nd in _internal(current) if nd.left.is_leaf and nd.right.is_leaf]
        weakest = min(cands, key=lambda nd: nd.sse - nd.left.sse - nd.right.sse)
        weakest.left = weakest.right = None
        weakest.split = None
        path[current.n_leaves()] = _copy(current)
    return path


def to_partition(tree: TreeNode, schema, loss: LossSpec = LossSpec()) -> PartitionModel:
    regions = tuple(Region((leaf.clause,), leaf.prediction) for leaf in tree.leaves())
    return PartitionModel(tuple(schema), regions, loss)


def tree_sse(tree: TreeNode) -> float:
    return sum(leaf.sse for leaf in tree.leaves())


def fit(data: SurvivalDataset, g: CensoringModel | None, loss: LossSpec = LossSpec(),
        config: CartConfig = CartConfig()) -> CandidateList:
    """Pruning path of the maximal tree as a candidate list (size = leaves)."""
    data.require_events()
    ws = _workspace(data, g, loss, config)
    path = prune_path(grow_in(ws, config))
    models = {k: to_partition(t, data.schema, loss) for k, t in sorted(path.items())}
    risks = {k: tree_sse(t) / data.n for k, t in sorted(path.items())}
    return CandidateList(models, risks)
