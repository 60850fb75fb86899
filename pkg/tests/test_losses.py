import math

import numpy as np
import pytest

from evoloss.coefficients import CoeffExpr
from evoloss.expressions import (
    INVALID,
    contains_required_leaves,
    evaluate,
    format_expression,
    parse_expression,
)
from evoloss.losses import (
    BAIKAL_CMA_COEFFICIENTS,
    as_body_expression,
    builtin,
    builtin_names,
)


def closed_form_cross_entropy(x, y):
    return x * math.log(y)


def closed_form_baikal(x, y):
    return math.log(y) - x / y


def closed_form_baikal_cma(x, y):
    c0, c1, c2, c3, c4, c5 = BAIKAL_CMA_COEFFICIENTS
    return c0 * (c1 * math.log(c2 * y) - c3 * ((c4 * x) / (c5 * y)))


CLOSED_FORMS = {
    "cross_entropy": closed_form_cross_entropy,
    "baikal": closed_form_baikal,
    "baikal_cma": closed_form_baikal_cma,
}


class TestBuiltins:
    def test_names(self):
        assert set(builtin_names()) == {"cross_entropy", "baikal", "baikal_cma"}

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="unknown builtin"):
            builtin("focal")

    def test_baikal_value_at_reference_point(self):
        body = builtin("baikal").body
        assert evaluate(body, 1.0, 0.5) == pytest.approx(math.log(0.5) - 2.0, abs=1e-15)

    def test_cross_entropy_zero_when_label_zero(self):
        body = builtin("cross_entropy").body
        for y in (0.1, 0.5, 0.9):
            assert evaluate(body, 0.0, y) == 0.0

    def test_baikal_cma_coefficient_list(self):
        loss = builtin("baikal_cma")
        assert isinstance(loss.coefficients, CoeffExpr)
        assert loss.coefficients.values == BAIKAL_CMA_COEFFICIENTS

    @pytest.mark.parametrize("name", ["cross_entropy", "baikal", "baikal_cma"])
    def test_formula_fidelity_10000_points(self, name):
        # |tree - closed form| < 1e-12 across the clipped prediction range
        body = builtin(name).body
        closed = CLOSED_FORMS[name]
        rng = np.random.default_rng(99)
        xs = rng.uniform(0.0, 1.0, size=10_000)
        ys = rng.uniform(1e-6, 1.0 - 1e-6, size=10_000)
        for x, y in zip(xs, ys):
            got = evaluate(body, x, y)
            assert got is not INVALID
            assert abs(got - closed(x, y)) < 1e-12

    def test_baikal_passes_gate_and_is_finite_on_clip_range(self):
        body = builtin("baikal").body
        assert contains_required_leaves(body)
        for y in (1e-7, 0.5, 1.0 - 1e-7):
            for x in (0.0, 1.0):
                value = evaluate(body, x, y)
                assert value is not INVALID and math.isfinite(value)

    def test_builtins_print_in_text_format(self):
        for name in builtin_names():
            text = format_expression(builtin(name).body)
            assert parse_expression(text) == builtin(name).body


class TestAsBodyExpression:
    def test_builtin_name(self):
        assert as_body_expression("baikal") == builtin("baikal").body

    def test_expression_text(self):
        assert as_body_expression("(mul x (log y))") == builtin("cross_entropy").body

    def test_coeff_expr_binds(self):
        loss = builtin("baikal_cma")
        assert as_body_expression(loss.coefficients) == loss.body

    def test_unknown_string_rejected(self):
        with pytest.raises(ValueError):
            as_body_expression("not_a_loss")

    def test_wrong_type_rejected(self):
        with pytest.raises(TypeError):
            as_body_expression(3.14)
