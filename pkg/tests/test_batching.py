import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphnas.batching import (
    REPLACEMENT, TRAIN_STEP, BatchPolicy, MemoryModel, OutOfBudgetError, activation_footprint,
    choose_batch_size, estimate_memory_model, governor_step,
)
from morphnas.cell import CellGraph, Network, NORMAL, REDUCTION
from morphnas.tensor import Tensor, relu


@pytest.fixture
def policy():
    return BatchPolicy(16, 16, 96, 5)


def roomy():
    return MemoryModel(0.0, 1.0, 1e9)


class TestChooseBatchSize:
    def test_threshold_binds(self, policy):
        assert choose_batch_size(policy, MemoryModel(0.0, 1.0, 100.0, 0.95)) == 80

    def test_cap_binds(self, policy):
        assert choose_batch_size(policy, roomy()) == 96

    def test_infeasible(self, policy):
        with pytest.raises(OutOfBudgetError):
            choose_batch_size(policy, MemoryModel(90.0, 1.0, 100.0, 0.95))

    def test_exact_fit_accepted(self):
        # 16 + 2 * 16 = 48 samples use exactly the 95-unit budget
        model = MemoryModel(47.0, 1.0, 100.0, 0.95)
        assert choose_batch_size(BatchPolicy(16, 16, 256), model) == 48

    @pytest.mark.parametrize("kwargs", [dict(b_min=0), dict(b_mult=0), dict(b_min=32, b_max=16),
                                        dict(probe_interval=0)])
    def test_invalid_policy(self, kwargs):
        with pytest.raises(ValueError):
            BatchPolicy(**kwargs)

    @pytest.mark.parametrize("args", [(-1.0, 1.0, 10.0), (0.0, 0.0, 10.0), (0.0, 1.0, 0.0)])
    def test_invalid_model(self, args):
        with pytest.raises(ValueError):
            MemoryModel(*args)

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            MemoryModel(0.0, 1.0, 10.0, 1.5)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 32), st.integers(1, 32), st.integers(0, 20), st.floats(0, 500), st.floats(0.1, 5),
           st.floats(1, 5000), st.floats(0, 5000), st.floats(0.05, 1.0))
    def test_lattice_and_monotone(self, b_min, b_mult, n_max, fixed, per_sample, capacity, extra, threshold):
        policy = BatchPolicy(b_min, b_mult, b_min + n_max * b_mult + (b_mult // 2), 5)
        small = MemoryModel(fixed, per_sample, capacity, threshold)
        large = MemoryModel(fixed, per_sample, capacity + extra, threshold)
        if not small.fits(b_min):
            with pytest.raises(OutOfBudgetError):
                choose_batch_size(policy, small)
            return
        b = choose_batch_size(policy, small)
        assert (b - b_min) % b_mult == 0 and b_min <= b <= policy.b_max
        assert small.fits(b)
        assert b + b_mult > policy.b_max or not small.fits(b + b_mult)
        assert choose_batch_size(policy, large) >= b


class TestGovernorStep:
    @pytest.mark.parametrize("current", [16, 48, 96])
    def test_replacement_resets(self, policy, current):
        assert governor_step(current, 7, REPLACEMENT, policy, roomy()) == 16

    def test_probe_grows(self, policy):
        assert governor_step(16, 5, TRAIN_STEP, policy, MemoryModel(0.0, 1.0, 100.0)) == 80

    @pytest.mark.parametrize("step", [1, 2, 3, 4, 6, 9, 11])
    def test_off_interval_unchanged(self, policy, step):
        assert governor_step(16, step, TRAIN_STEP, policy, roomy()) == 16

    def test_step_zero_is_not_a_probe(self, policy):
        assert governor_step(16, 0, TRAIN_STEP, policy, roomy()) == 16

    def test_never_shrinks_without_replacement(self, policy):
        assert governor_step(96, 10, TRAIN_STEP, policy, MemoryModel(0.0, 1.0, 40.0)) == 96

    def test_unknown_event(self, policy):
        with pytest.raises(ValueError):
            governor_step(16, 5, "other", policy, roomy())

    def test_event_sequence(self, policy):
        model = MemoryModel(0.0, 1.0, 100.0)
        b, trace = 16, []
        events = [TRAIN_STEP] * 6 + [REPLACEMENT] + [TRAIN_STEP] * 5
        step = 0
        for event in events:
            if event == REPLACEMENT:
                step = 0
            else:
                step += 1
            b = governor_step(b, step, event, policy, model)
            trace.append(b)
        assert trace == [16, 16, 16, 16, 80, 80, 16, 16, 16, 16, 16, 80]


class TestMemoryEstimate:
    def test_footprint_counts_intermediates(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        y = relu(x * 2.0)
        # the product and the relu output are recorded; the leaf input is not
        assert activation_footprint(y) == 12

    def test_network_model_scales(self):
        net = Network(CellGraph(NORMAL, 2), CellGraph(REDUCTION, 2), 3, 4, 4, rng=np.random.default_rng(0))
        small = estimate_memory_model(net, (3, 8, 8), 1e7)
        large = estimate_memory_model(net, (3, 16, 16), 1e7)
        assert small.fixed_cost == large.fixed_cost
        assert small.fixed_cost == 3 * (net.parameter_count() + sum(a.size for a in net.alpha_parameters()))
        assert large.per_sample_cost == pytest.approx(4 * small.per_sample_cost, rel=0.1)
