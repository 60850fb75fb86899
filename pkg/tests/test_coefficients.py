import numpy as np
import pytest

from evoloss.coefficients import CoeffExpr, attach_coefficients, bind, prune_absorbable
from evoloss.expressions import (
    GenerationWeights,
    INVALID,
    X,
    Y,
    const,
    evaluate,
    format_expression,
    log,
    parse_expression,
    preorder,
    random_tree,
)

BAIKAL_BODY = log(Y) - X / Y
BAIKAL_CMA_VALUES = (2.7279, 0.9863, 1.5352, -1.1135, 1.3716, -0.8411)


def _sample_points(rng, n):
    return rng.uniform(0.05, 0.95, size=(n, 2))


class TestAttach:
    def test_one_slot_per_node(self):
        ce = attach_coefficients(BAIKAL_BODY)
        assert ce.dimension == 6
        assert ce.slots == (0, 1, 2, 3, 4, 5)

    def test_single_leaf(self):
        assert attach_coefficients(X).dimension == 1

    def test_unit_values_reproduce_base(self):
        rng = np.random.default_rng(0)
        weights = GenerationWeights()
        for _ in range(100):
            tree = random_tree(weights, 3, rng)
            bound = bind(attach_coefficients(tree))
            for x, y in _sample_points(rng, 10):
                base_val = evaluate(tree, x, y)
                bound_val = evaluate(bound, x, y)
                if base_val is INVALID:
                    assert bound_val is INVALID
                else:
                    assert bound_val == pytest.approx(base_val, rel=1e-12, abs=1e-12)


class TestBind:
    def test_baikal_cma_value_at_reference_point(self):
        # direct arithmetic on the coefficient-expanded form
        c0, c1, c2, c3, c4, c5 = BAIKAL_CMA_VALUES
        x, y = 1.0, 0.5
        expected = c0 * (c1 * np.log(c2 * y) - c3 * ((c4 * x) / (c5 * y)))
        bound = bind(attach_coefficients(BAIKAL_BODY), BAIKAL_CMA_VALUES)
        assert evaluate(bound, x, y) == pytest.approx(expected, rel=1e-14)

    def test_wrong_length_rejected(self):
        ce = attach_coefficients(BAIKAL_BODY)
        with pytest.raises(ValueError):
            bind(ce, (1.0, 2.0))
        with pytest.raises(ValueError):
            ce.with_values((1.0,))

    def test_slot_order_is_preorder(self):
        # slots line up with (sub, log, y, div, x, y)
        bound = bind(attach_coefficients(BAIKAL_BODY), (2.0, 3.0, 5.0, 7.0, 11.0, 13.0))
        assert (
            format_expression(bound)
            == "(mul 2.0 (sub (mul 3.0 (log (mul 5.0 y))) (mul 7.0 (div (mul 11.0 x) (mul 13.0 y)))))"
        )

    def test_serialization_round_trip(self):
        ce = attach_coefficients(BAIKAL_BODY).with_values(BAIKAL_CMA_VALUES)
        assert CoeffExpr.from_dict(ce.to_dict()) == ce


# ---------------------------------------------------------------------------
# pruning


def _exact_reduced_values(ce_full, pruned, original_values):
    """Solve for pruned-slot values reproducing the fully-coefficiented tree,
    by the absorption algebra itself: factors on mul/div operands migrate to
    the nearest kept ancestor slot; factors on add/sub nodes distribute onto
    their children. Returns None when a denominator factor vanishes."""
    tree = ce_full.base
    orig = dict(zip(ce_full.slots, original_values))
    nodes = list(preorder(tree))
    sizes = {}

    def node_size(i):
        if i not in sizes:
            sizes[i] = 1 + sum(
                node_size(c) for c in child_indices(i)
            )
        return sizes[i]

    children_map: dict[int, list[int]] = {i: [] for i in range(len(nodes))}

    def build(i):
        j = i + 1
        for _ in nodes[i].children:
            children_map[i].append(j)
            j = build(j)
        return j

    build(0)

    def child_indices(i):
        return children_map[i]

    reduced: dict[int, float] = {}
    failed = []

    def take(i):
        # factor this slotless mul/div operand passes up
        c = orig[i]
        op = nodes[i].op
        if op in ("add", "sub"):
            for j in child_indices(i):
                place(j, 1.0)
            return c
        if op in ("mul", "div"):
            fl = take(child_indices(i)[0])
            fr = take(child_indices(i)[1])
            if op == "div":
                if fr == 0.0:
                    failed.append(i)
                    return 1.0
                return c * fl / fr
            return c * fl * fr
        for j in child_indices(i):
            place(j, 1.0)
        return c

    def place(i, down):
        c = orig[i]
        op = nodes[i].op
        total = down * c
        if op in ("add", "sub"):
            for j in child_indices(i):
                place(j, total)
        elif op in ("mul", "div"):
            fl = take(child_indices(i)[0])
            fr = take(child_indices(i)[1])
            if op == "div":
                if fr == 0.0:
                    failed.append(i)
                    return
                reduced[i] = total * fl / fr
            else:
                reduced[i] = total * fl * fr
        else:
            reduced[i] = total
            for j in child_indices(i):
                place(j, 1.0)

    place(0, 1.0)
    if failed:
        return None
    assert set(reduced) == set(pruned.slots)
    return tuple(reduced[s] for s in pruned.slots)


class TestPrune:
    def test_mul_children_absorbed_into_parent(self):
        ce = prune_absorbable(attach_coefficients(X * Y))
        assert ce.slots == (0,)

    def test_add_parent_distributes_to_children(self):
        # the c*(a*x + b*y) = (ca)x + (cb)y rule: parent slot pruned
        ce = prune_absorbable(attach_coefficients(X + Y))
        assert ce.slots == (1, 2)

    def test_single_leaf_kept(self):
        ce = prune_absorbable(attach_coefficients(X))
        assert ce.slots == (0,)

    def test_baikal_prunes_to_three(self):
        # kept: log, the y under it, and the div node
        ce = prune_absorbable(attach_coefficients(BAIKAL_BODY))
        assert ce.slots == (1, 2, 3)

    def test_unary_children_keep_slots(self):
        # log(c*y) is not expressible by an outer factor
        ce = prune_absorbable(attach_coefficients(log(Y)))
        assert ce.slots == (0, 1)

    def test_slot_count_never_grows(self):
        rng = np.random.default_rng(1)
        weights = GenerationWeights()
        for _ in range(200):
            full = attach_coefficients(random_tree(weights, 3, rng))
            assert prune_absorbable(full).dimension <= full.dimension

    def test_pruning_preserves_function_family(self):
        # For random trees and random original coefficient vectors, solved
        # reduced values must reproduce the original function pointwise.
        rng = np.random.default_rng(2)
        weights = GenerationWeights()
        total_agreements = 0
        for _ in range(50):
            tree = random_tree(weights, 3, rng)
            full = attach_coefficients(tree)
            pruned = prune_absorbable(full)
            for _ in range(20):
                original = tuple(rng.uniform(0.25, 2.0, size=full.dimension))
                solved = _exact_reduced_values(full, pruned, original)
                if solved is None:
                    continue
                bound_full = bind(full, original)
                bound_reduced = bind(pruned, solved)
                for x, y in _sample_points(rng, 200):
                    want = evaluate(bound_full, x, y)
                    got = evaluate(bound_reduced, x, y)
                    if want is INVALID or got is INVALID:
                        assert (want is INVALID) == (got is INVALID)
                        continue
                    if abs(want) > 1e6:
                        continue
                    assert abs(want - got) < 1e-8 * max(1.0, abs(want))
                    total_agreements += 1
        assert total_agreements > 50_000  # the corpus exercised the oracle

    def test_prune_idempotent(self):
        ce = attach_coefficients(BAIKAL_BODY)
        once = prune_absorbable(ce)
        assert prune_absorbable(once).slots == once.slots


class TestValidation:
    def test_slots_must_be_in_range(self):
        with pytest.raises(ValueError):
            CoeffExpr(X, (1,), (1.0,))

    def test_slots_must_be_sorted_unique(self):
        with pytest.raises(ValueError):
            CoeffExpr(X + Y, (1, 1), (1.0, 1.0))

    def test_values_length_checked(self):
        with pytest.raises(ValueError):
            CoeffExpr(X + Y, (0, 1), (1.0,))
