"""Training-data generation: trajectories, labels, balancing, persistence."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safuzz.datagen import (
    Dataset,
    GenerationConfig,
    MutationConfig,
    Signal,
    apply_scaling,
    build_dataset,
    dataset_load,
    dataset_save,
    derive_labels,
    featurize,
    generate_base_inputs,
    mutate_step,
    preprocess_scale,
    run_trajectory,
)
from safuzz.errors import FileFormatError, GenerationFailure, UsageError
from safuzz.kernels import unit_operands
from safuzz.oracles import run_oracles
from safuzz.tensor import Tensor


def fake_verdict(passed):
    from safuzz.oracles import PASS, FailureClass, OracleVerdict

    return PASS if passed else OracleVerdict(False, FailureClass.NAN_OR_INF, "x")


def point(value, passed):
    return (Tensor.of([float(value)]), fake_verdict(passed))


class TestBaseInputs:
    def test_round_robin_regions(self):
        config = GenerationConfig(n_base=3, regions=((-100, 0), (0, 100), (100, 1e6)),
                                  shape=(2,))
        rng = np.random.default_rng(0)
        bases = generate_base_inputs(config, rng)
        assert len(bases) == 3
        assert (bases[0].elements < 0).all()
        assert ((bases[1].elements >= 0) & (bases[1].elements < 100)).all()
        assert (bases[2].elements >= 100).all()

    def test_default_count_is_100(self):
        config = GenerationConfig(regions=((-1, 1),), shape=(1,))
        assert len(generate_base_inputs(config, np.random.default_rng(0))) == 100

    def test_pixel_bounds_clamp(self):
        config = GenerationConfig(n_base=10, regions=((-500, 500),), shape=(3,),
                                  pixel_bounds=(0.0, 255.0))
        for base in generate_base_inputs(config, np.random.default_rng(0)):
            assert (base.elements >= 0).all() and (base.elements <= 255).all()


class TestMutateStep:
    def test_exponential_formula(self):
        mc = MutationConfig("exponential", rate=1.0, direction="up")
        out = mutate_step(Tensor.of([10.0]), 1, mc, np.random.default_rng(0))
        assert out.elements[0] == pytest.approx(10.0 + math.e)

    def test_sinusoidal_unit_peak(self):
        mc = MutationConfig("sinusoidal", rate=math.pi / 2, direction="up", scale=1.0)
        out = mutate_step(Tensor.of([10.0]), 1, mc, np.random.default_rng(0))
        assert out.elements[0] == pytest.approx(11.0)

    def test_random_step_bounded_by_rate(self):
        mc = MutationConfig("random", rate=2.0, direction="down")
        rng = np.random.default_rng(0)
        for k in range(1, 20):
            out = mutate_step(Tensor.of([0.0]), k, mc, rng)
            assert -2.0 <= out.elements[0] <= 0.0

    def test_pixel_bounds_reclamped(self):
        mc = MutationConfig("exponential", rate=2.0, direction="up")
        out = mutate_step(Tensor.of([250.0]), 3, mc, np.random.default_rng(0),
                          pixel_bounds=(0.0, 255.0))
        assert out.elements[0] <= 255.0

    def test_step_index_starts_at_one(self):
        mc = MutationConfig("exponential", rate=1.0)
        with pytest.raises(UsageError):
            mutate_step(Tensor.of([0.0]), 0, mc, np.random.default_rng(0))


class TestDeriveLabels:
    def test_fail_to_success_reverses_direction(self):
        # base 10 fails, one up-step to 30 passes -> (30, Decrease), (10, NoChange)
        samples = derive_labels([point(10, False), point(30, True)])
        got = {(s.features[0], s.label) for s in samples}
        assert got == {(10.0, Signal.NO_CHANGE), (30.0, Signal.DECREASE)}

    def test_success_to_fail_keeps_direction(self):
        samples = derive_labels([point(-1, True), point(5, False)])
        got = {(s.features[0], s.label) for s in samples}
        assert got == {(-1.0, Signal.INCREASE), (5.0, Signal.NO_CHANGE)}

    def test_multi_step_trajectory(self):
        samples = derive_labels(
            [point(10, True), point(20, True), point(30, True), point(40, False)]
        )
        got = {(s.features[0], s.label) for s in samples}
        # every passing point carries the mutation direction
        assert {(20.0, Signal.INCREASE), (30.0, Signal.INCREASE),
                (40.0, Signal.NO_CHANGE)} <= got
        assert (10.0, Signal.INCREASE) in got

    def test_fail_to_success_multi_step(self):
        samples = derive_labels(
            [point(100, False), point(130, False), point(160, True)]
        )
        got = {(s.features[0], s.label) for s in samples}
        assert got == {(100.0, Signal.NO_CHANGE), (130.0, Signal.NO_CHANGE),
                       (160.0, Signal.DECREASE)}

    def test_no_flip_is_empty(self):
        assert derive_labels([point(1, True), point(2, True)]) == []

    def test_short_trajectory_rejected(self):
        with pytest.raises(UsageError):
            derive_labels([point(1, True)])

    @given(st.lists(st.booleans(), min_size=2, max_size=12),
           st.booleans())
    @settings(max_examples=100, deadline=None)
    def test_never_both_directions_for_one_value(self, outcomes, up):
        step = 1.0 if up else -1.0
        trajectory = [point(i * step, passed) for i, passed in enumerate(outcomes)]
        samples = derive_labels(trajectory)
        by_value = {}
        for s in samples:
            by_value.setdefault(s.features[0], set()).add(s.label)
        for labels in by_value.values():
            assert not ({Signal.INCREASE, Signal.DECREASE} <= labels)


class TestFeaturize:
    def test_flatten_when_sizes_match(self):
        t = Tensor.of(np.arange(9.0).reshape(3, 3))
        assert featurize(t, 9).tolist() == list(np.arange(9.0))

    def test_quantiles_for_larger_tensors(self):
        t = Tensor.of(np.arange(784.0).reshape(28, 28))
        feats = featurize(t, 9)
        assert feats[0] == 0.0 and feats[-1] == 783.0
        assert len(feats) == 9

    def test_constant_tensor_constant_vector(self):
        t = Tensor.of(np.full((28, 28), 3.5))
        assert (featurize(t, 9) == 3.5).all()

    def test_empty_tensor_rejected(self):
        with pytest.raises(UsageError):
            featurize(Tensor.of([]), 9)

    def test_unknown_feature_len_rejected(self):
        with pytest.raises(UsageError):
            featurize(Tensor.of([1.0]), 7)

    @given(st.lists(st.floats(min_value=-1e9, max_value=1e9), min_size=2,
                    max_size=30).filter(lambda v: len(v) != 9))
    @settings(max_examples=80, deadline=None)
    def test_quantile_endpoints_are_min_max(self, values):
        # applies to the quantile path only; matching sizes flatten unsorted
        feats = featurize(Tensor.of(values), 9)
        assert feats[0] == min(values)
        assert feats[-1] == max(values)
        assert (np.diff(feats) >= 0).all()


class TestPreprocessScale:
    def _dataset(self, kernel="log"):
        return Dataset(kernel=kernel, shape=(3,),
                       features=np.array([[0.0, 1.0, 2.0], [3.0, 0.0, 5.0]]),
                       labels=np.array([0, 1], dtype=np.int8))

    def test_epsilon_removes_zeros(self):
        out = preprocess_scale(self._dataset("log"), epsilon=1e-8)
        assert (out.features != 0.0).all()
        assert out.scaling["zero_epsilon"] == 1e-8

    def test_identity_scale_keeps_values(self):
        out = preprocess_scale(self._dataset("exp"), epsilon=1e-8)
        # exp is defined at zero; no epsilon shift applies
        assert out.scaling["zero_epsilon"] is None
        assert (out.features == self._dataset().features).all()

    def test_replay_is_bit_identical(self):
        ds = preprocess_scale(self._dataset("log"), epsilon=1e-8, scale=2.0,
                              offset=0.5)
        raw = self._dataset("log").features
        replayed = apply_scaling(raw, ds.scaling)
        assert replayed.tobytes() == ds.features.tobytes()


class TestBuildDataset:
    SMALL = dict(n_base=30, mutations_per_base=40, target_size=3000)

    def test_exp_dataset_balanced(self):
        ds = build_dataset("exp", GenerationConfig(seed=3, **self.SMALL))
        counts = ds.class_counts()
        # exp's failure region is one-sided: increase and no-change only
        assert set(counts) == {"NoChange", "Increase"}
        assert min(counts.values()) / max(counts.values()) >= 0.5
        assert min(counts.values()) / len(ds) >= 0.2

    def test_never_failing_kernel_reports_generation_failure(self):
        config = GenerationConfig(n_base=5, regions=((0.4, 0.6),), shape=(2,),
                                  mutations_per_base=3, seed=0, target_size=500)
        mcs = [MutationConfig("random", rate=0.01, max_steps=3, direction=d)
               for d in ("up", "down")]
        with pytest.raises(GenerationFailure, match="sigmoid"):
            build_dataset("sigmoid", config, mconfigs=mcs)

    def test_deterministic_under_seed(self):
        a = build_dataset("log", GenerationConfig(seed=5, **self.SMALL))
        b = build_dataset("log", GenerationConfig(seed=5, **self.SMALL))
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_nochange_labels_replay_as_failures(self):
        ds = build_dataset("exp", GenerationConfig(seed=3, **self.SMALL))
        scaling = ds.scaling
        rows = ds.features[ds.labels == int(Signal.NO_CHANGE)][:50]
        for row in rows:
            raw = (row - scaling["offset"]) / scaling["scale"]
            x = Tensor(raw.reshape(ds.shape))
            assert not run_oracles("exp", unit_operands("exp", x)).passed


class TestTrajectories:
    def test_trajectory_stops_at_flip(self):
        mc = MutationConfig("exponential", rate=1.0, max_steps=50, direction="up")
        points = run_trajectory("exp", Tensor.of(np.full((3, 3), 80.0)), mc,
                                np.random.default_rng(0))
        assert points[0][1].passed
        assert not points[-1][1].passed
        assert all(v.passed for _, v in points[:-1])


class TestPersistence:
    def _small(self):
        return build_dataset(
            "log", GenerationConfig(seed=5, n_base=20, mutations_per_base=30,
                                    target_size=1500)
        )

    def test_round_trip(self, tmp_path):
        ds = self._small()
        path = tmp_path / "log.csv"
        dataset_save(ds, path)
        back = dataset_load(path)
        assert back.kernel == ds.kernel
        assert back.shape == ds.shape
        assert back.features.tobytes() == ds.features.tobytes()
        assert back.labels.tobytes() == ds.labels.tobytes()
        assert back.scaling == ds.scaling

    def test_truncated_file_rejected(self, tmp_path):
        ds = self._small()
        path = tmp_path / "log.csv"
        dataset_save(ds, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[: len(lines) // 2]))
        with pytest.raises(FileFormatError, match="truncated"):
            dataset_load(path)

    def test_version_mismatch_rejected(self, tmp_path):
        ds = self._small()
        path = tmp_path / "log.csv"
        dataset_save(ds, path)
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace('"format_version": 1', '"format_version": 9')
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FileFormatError, match="format_version"):
            dataset_load(path)
