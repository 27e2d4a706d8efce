"""The guided search: scanning, signal propagation, constraints, site loops.

Unit tests drive the loop with small hand-built forests (a single threshold
tree per kernel) so no training is needed; the acceptance suite exercises the
real trained models.
"""

import numpy as np
import pytest

from safuzz.autodiff import forward_eval
from safuzz.datagen import Signal
from safuzz.errors import UsageError
from safuzz.forest import DecisionTree, Forest
from safuzz.fuzzer import (
    Bounds,
    FuzzConfig,
    constrain_update,
    fuzz_program,
    fuzz_site,
    propagate_signal,
    random_fuzz_site,
    scan_for_unstable,
    validate_failure,
)
from safuzz.graph import Graph, InputDecl, Node
from safuzz.oracles import FailureClass
from safuzz.registry import default_registry
from safuzz.tensor import Precision, Tensor


def band_tree(lo, hi, inside=Signal.NO_CHANGE, below=Signal.INCREASE,
              above=Signal.DECREASE, feature=0):
    """Tree emitting `below` under lo, `inside` in [lo, hi], `above` over hi."""

    def hist(sig):
        h = [0, 0, 0]
        h[int(sig)] = 1
        return h

    return DecisionTree(
        feature=np.array([feature, -1, feature, -1, -1], dtype=np.int32),
        threshold=np.array([lo, 0.0, hi, 0.0, 0.0]),
        left=np.array([1, -1, 3, -1, -1], dtype=np.int32),
        right=np.array([2, -1, 4, -1, -1], dtype=np.int32),
        counts=np.array([hist(inside), hist(below), hist(inside), hist(inside),
                         hist(above)], dtype=np.int64),
    )


def hand_forest(kernel, tree):
    return Forest(trees=[tree], kernel=kernel, shape=(3, 3), feature_len=9, seed=0)


def exp_graph(shape=(3, 3)):
    return Graph([InputDecl("x", shape, bounds=(-10.0, 10.0))],
                 [Node("y", "exp", ("x",))], "y")


# a forest that says increase below the exp overflow bound, no-change above
EXP_FOREST = hand_forest(
    "exp", band_tree(88.7229, 1e308, below=Signal.INCREASE, above=Signal.NO_CHANGE)
)
LOG_FOREST = hand_forest(
    "log", band_tree(0.0, 1e308, below=Signal.NO_CHANGE, inside=Signal.DECREASE,
                     above=Signal.DECREASE, feature=8)
)


class TestScan:
    def test_single_site(self):
        scan = scan_for_unstable(exp_graph())
        assert len(scan.sites) == 1
        site = scan.sites[0]
        assert site.kernel == "exp" and site.node_id == "y"
        assert site.entry_node == "x" and site.entry_shape == (3, 3)

    def test_stable_helpers_are_not_sites(self):
        g = Graph([InputDecl("x", (2,))],
                  [Node("a", "scale", ("x",), {"factor": 2.0}),
                   Node("b", "add", ("a", "a"))], "b")
        scan = scan_for_unstable(g)
        assert scan.sites == [] and scan.diagnostics == []

    def test_unimplemented_registry_op_is_diagnostic(self):
        reg = default_registry()
        g = Graph([InputDecl("x", (2, 2))], [Node("y", "SVD", ("x",))], "y",
                  extra_ops=frozenset(reg.names()))
        scan = scan_for_unstable(g, reg)
        assert scan.sites == []
        assert len(scan.diagnostics) == 1 and "SVD" in scan.diagnostics[0]

    def test_sites_in_topological_order(self):
        g = Graph([InputDecl("x", (3, 3))],
                  [Node("a", "square", ("x",)), Node("b", "sum", ("a",)),
                   Node("c", "sqrt", ("b",))], "c")
        scan = scan_for_unstable(g)
        assert [s.node_id for s in scan.sites] == ["a", "b", "c"]

    def test_div_entry_is_denominator(self):
        g = Graph([InputDecl("n", (2,)), InputDecl("d", (2,))],
                  [Node("y", "Div", ("n", "d"))], "y")
        assert scan_for_unstable(g).sites[0].entry_node == "d"


class TestPropagateSignal:
    def _tape_and_site(self, factor):
        g = Graph([InputDecl("x", (1,))],
                  [Node("e", "scale", ("x",), {"factor": factor}),
                   Node("y", "exp", ("e",))], "y")
        site = scan_for_unstable(g).sites[0]
        tape = forward_eval(g, [Tensor.of([1.0])], Precision.SINGLE,
                            stop_at=site.entry_node)
        return g, site, tape

    def test_positive_gradient(self):
        g, site, tape = self._tape_and_site(2.0)
        delta = propagate_signal(g, site, tape, Signal.INCREASE, rate=1.0)
        assert delta["x"].tolist() == [0.5]

    def test_negative_gradient_flips_sign(self):
        g, site, tape = self._tape_and_site(-0.5)
        delta = propagate_signal(g, site, tape, Signal.DECREASE, rate=1.0)
        assert delta["x"].tolist() == [2.0]

    def test_zero_gradient_clamped(self):
        g, site, tape = self._tape_and_site(0.0)
        delta = propagate_signal(g, site, tape, Signal.INCREASE, rate=1.0,
                                 grad_floor=1e-6)
        assert delta["x"].tolist() == [1e6]

    def test_no_change_rejected(self):
        g, site, tape = self._tape_and_site(1.0)
        with pytest.raises(UsageError):
            propagate_signal(g, site, tape, Signal.NO_CHANGE, rate=1.0)


class TestConstrainUpdate:
    def test_interval_midpoint(self):
        # increase issued at 10, decrease at 100: constraint 10 < x < 100
        bounds = Bounds.unconstrained((1,))
        x = constrain_update(np.array([10.0]), np.array([5.0]), bounds,
                             Signal.INCREASE)
        x = constrain_update(np.array([100.0]), np.array([-5.0]), bounds,
                             Signal.DECREASE)
        assert bounds.lower.tolist() == [10.0]
        assert bounds.upper.tolist() == [100.0]
        assert x.tolist() == [55.0]

    def test_plain_step_without_history(self):
        bounds = Bounds.unconstrained((1,))
        x = constrain_update(np.array([1.0]), np.array([0.5]), bounds,
                             Signal.INCREASE)
        assert x.tolist() == [1.5]

    def test_contradictory_bounds_reset(self):
        bounds = Bounds(lower=np.array([50.0]), upper=np.array([40.0]))
        x = constrain_update(np.array([0.0]), np.array([0.5]), bounds,
                             Signal.NO_CHANGE)
        assert np.isneginf(bounds.lower[0]) and np.isposinf(bounds.upper[0])
        assert x.tolist() == [0.5]

    def test_one_sided_clamp_stays_inside(self):
        bounds = Bounds(lower=np.array([2.0]), upper=np.array([np.inf]))
        x = constrain_update(np.array([3.0]), np.array([-10.0]), bounds,
                             Signal.NO_CHANGE)
        assert x[0] > 2.0

    def test_bounds_monotone_between_resets(self):
        rng = np.random.default_rng(0)
        bounds = Bounds.unconstrained((3,))
        x = rng.uniform(-5, 5, size=3)
        prev_lo, prev_hi = bounds.lower.copy(), bounds.upper.copy()
        for _ in range(50):
            signal = Signal.INCREASE if rng.uniform() < 0.5 else Signal.DECREASE
            x = constrain_update(x, rng.uniform(-1, 1, size=3), bounds, signal)
            widened = (bounds.lower < prev_lo) | (bounds.upper > prev_hi)
            was_reset = np.isneginf(bounds.lower) & np.isposinf(bounds.upper)
            assert (~widened | was_reset).all()
            prev_lo, prev_hi = bounds.lower.copy(), bounds.upper.copy()


class TestValidateFailure:
    def test_exp_entry_89(self):
        g = exp_graph()
        site = scan_for_unstable(g).sites[0]
        verdict = validate_failure(g, site, [Tensor.of(np.full((3, 3), 89.0))])
        assert not verdict.passed
        assert verdict.failure_class is FailureClass.NAN_OR_INF

    def test_log_entry_one_passes(self):
        g = Graph([InputDecl("x", (1,))], [Node("y", "log", ("x",))], "y")
        site = scan_for_unstable(g).sites[0]
        assert validate_failure(g, site, [Tensor.of([1.0])]).passed

    def test_cosine_fig1_values(self):
        g = Graph(
            [InputDecl("y", (3,))],
            [Node("c", "constant", (), {"value": [2606.66824394, 2477.72226966,
                                                  3251.84008903]}),
             Node("sim", "CosineSimilarity", ("y", "c"))],
            "sim",
        )
        site = scan_for_unstable(g).sites[0]
        fig1_y = [2.39482538431398614e-09, 7.39647891389834008e-09,
                  4.96805019548943425e-09]
        verdict = validate_failure(g, site, [Tensor.of(fig1_y)])
        assert not verdict.passed
        assert verdict.failure_class is FailureClass.REFERENCE_MISMATCH


class TestFuzzSite:
    def test_exp_found_with_overflowing_entry(self):
        g = exp_graph()
        site = scan_for_unstable(g).sites[0]
        config = FuzzConfig(seed=0, timeout=30.0)
        result = fuzz_site(g, site, EXP_FOREST, config, np.random.default_rng(0))
        assert result.found
        entry = np.asarray(result.failing_input["x"])
        assert entry.max() > 88.72
        out = forward_eval(g, [Tensor(entry)], Precision.SINGLE).value("y")
        assert np.isposinf(out.elements).any()

    def test_log_found_below_zero(self):
        g = Graph([InputDecl("x", (3, 3), bounds=(4.0, 6.0))],
                  [Node("y", "log", ("x",))], "y")
        site = scan_for_unstable(g).sites[0]
        result = fuzz_site(g, site, LOG_FOREST, FuzzConfig(seed=1, timeout=30.0),
                           np.random.default_rng(1))
        assert result.found
        assert result.verdict.failure_class is FailureClass.NAN_OR_INF
        # replaying the stored input reproduces the verdict
        replay = validate_failure(g, site, [Tensor.of(result.failing_input["x"])])
        assert replay.failure_class is result.verdict.failure_class

    def test_clamped_safe_program_exhausts(self):
        g = Graph([InputDecl("x", (3, 3), bounds=(0.0, 1.0), clamp=True)],
                  [Node("y", "sigmoid", ("x",))], "y")
        site = scan_for_unstable(g).sites[0]
        forest = hand_forest("sigmoid", band_tree(88.7229, 1e308,
                                                  below=Signal.INCREASE,
                                                  above=Signal.NO_CHANGE))
        config = FuzzConfig(seed=0, timeout=30.0, max_iters=200)
        result = fuzz_site(g, site, forest, config, np.random.default_rng(0))
        assert result.status == "Exhausted"
        assert result.iterations == 200

    def test_forest_kernel_must_match(self):
        g = exp_graph()
        site = scan_for_unstable(g).sites[0]
        with pytest.raises(UsageError):
            fuzz_site(g, site, LOG_FOREST, FuzzConfig(seed=0),
                      np.random.default_rng(0))

    def test_reproducible_iteration_counts(self):
        g = exp_graph()
        site = scan_for_unstable(g).sites[0]
        config = FuzzConfig(seed=7, timeout=30.0)
        runs = [
            fuzz_site(g, site, EXP_FOREST, config,
                      np.random.default_rng(np.random.SeedSequence([7, 0])))
            for _ in range(2)
        ]
        assert runs[0].iterations == runs[1].iterations
        assert runs[0].failing_input == runs[1].failing_input
        assert runs[0].sa_queries == runs[1].sa_queries


class TestRandomBaseline:
    def test_finds_log_quickly(self):
        g = Graph([InputDecl("x", (1,), bounds=(0.1, 1.0))],
                  [Node("y", "log", ("x",))], "y")
        site = scan_for_unstable(g).sites[0]
        result = random_fuzz_site(g, site, FuzzConfig(seed=3, timeout=30.0),
                                  np.random.default_rng(3))
        assert result.found

    def test_exhausts_on_clamped_program(self):
        g = Graph([InputDecl("x", (3, 3), bounds=(0.0, 1.0), clamp=True)],
                  [Node("y", "sigmoid", ("x",))], "y")
        site = scan_for_unstable(g).sites[0]
        result = random_fuzz_site(g, site, FuzzConfig(seed=0, max_iters=100),
                                  np.random.default_rng(0))
        assert result.status == "Exhausted"


class TestFuzzProgram:
    def test_one_site_program(self):
        results, diags = fuzz_program(exp_graph(), None, [EXP_FOREST],
                                      FuzzConfig(seed=0, timeout=30.0))
        assert len(results) == 1 and results[0].found

    def test_three_sites_in_order(self):
        g = Graph([InputDecl("x", (3, 3), bounds=(0.5, 2.0))],
                  [Node("a", "square", ("x",)), Node("b", "sum", ("a",)),
                   Node("c", "sqrt", ("b",))], "c")
        forests = [
            hand_forest("square", band_tree(1e308, 2e308, below=Signal.DECREASE,
                                            above=Signal.NO_CHANGE)),
            hand_forest("sum", band_tree(1e308, 2e308, below=Signal.DECREASE,
                                         above=Signal.NO_CHANGE)),
            hand_forest("sqrt", band_tree(0.0, 1e308, below=Signal.NO_CHANGE,
                                          inside=Signal.DECREASE,
                                          above=Signal.DECREASE, feature=8)),
        ]
        config = FuzzConfig(seed=0, timeout=5.0, max_iters=50)
        results, _ = fuzz_program(g, None, forests, config)
        assert [r.site.node_id for r in results] == ["a", "b", "c"]

    def test_missing_model_is_diagnostic(self):
        results, diags = fuzz_program(exp_graph(), None, [LOG_FOREST],
                                      FuzzConfig(seed=0, max_iters=10))
        assert results == []
        assert any("no trained model" in d for d in diags)
