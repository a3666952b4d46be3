import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import morphnas.search as search_module
from morphnas.batching import BatchPolicy
from morphnas.cell import NORMAL, CellGraph, EdgePool, WeightStore, read_cell
from morphnas.checkpoint import CheckpointError
from morphnas.data import split_half, synthetic_dataset
from morphnas.metrics import CYCLE_FILE, EPOCH_FILE
from morphnas.search import (
    CycleSchedule, CycleSpec, ScheduleError, SearchConfig, SearchState, checkpoint_path, prune_edge,
    replace_edge, run_search,
)
from morphnas.space import (
    SpaceConstraints, apply_morph, avg_pool, fresh_weights, identity, max_pool, preset, sep_conv,
)

DL = preset("DL")
ROOT = sep_conv(3, 1, ())
SPECS = [identity(), max_pool(3), avg_pool(3), sep_conv(3, 1, ()), sep_conv(5, 1, ()), sep_conv(3, 2, ()),
         sep_conv(3, 1, (1,)), sep_conv(7, 2, (1,))]


def pool_of(pairs):
    specs, alphas = zip(*pairs)
    return EdgePool(list(specs), np.array(alphas, dtype=float))


def mini_config(schedule=None, seed=0):
    schedule = schedule or CycleSchedule.from_lists([1, 1, 1], [0, 1, 0], [3, 0, 0], [6, 2, 1])
    return SearchConfig(schedule=schedule, nodes=2, cells=3, init_channels=4, capacity_units=1e7,
                        policy=BatchPolicy(8, 8, 32, 5), seed=seed)


@pytest.fixture(scope="module")
def halves():
    return split_half(synthetic_dataset(4, 48, 8, seed=0))


# ---------------------------------------------------------------- schedule

class TestSchedule:
    def test_default_rows(self):
        rows = CycleSchedule.default().rows()
        assert rows["epochs"] == [15, 15, 10, 10, 10, 10, 10, 10, 10]
        assert rows["grace_epochs"] == [5, 5, 3, 3, 3, 3, 3, 3, 3]
        assert rows["morphisms"] == [3, 3, 3, 3, 3, 0, 0, 0, 0]
        assert rows["candidates"] == [6, 6, 6, 6, 6, 4, 3, 2, 1]

    def test_total_epochs(self):
        assert CycleSchedule.default().total_epochs == 15 + 15 + 7 * 10 == 100

    def test_keep(self):
        assert [c.keep for c in CycleSchedule.default()] == [3, 3, 3, 3, 3, 4, 3, 2, 1]

    @pytest.mark.parametrize("args", [(5, 6, 0, 1), (0, 0, 0, 1), (5, 1, 3, 2), (5, 1, 0, 0), (5, -1, 0, 1)])
    def test_invalid_cycle(self, args):
        with pytest.raises(ScheduleError):
            CycleSpec(*args)

    def test_growth_after_morphing_rejected(self):
        with pytest.raises(ScheduleError):
            CycleSchedule.from_lists([1, 1, 1], [0, 0, 0], [3, 0, 0], [6, 2, 3])

    def test_row_lengths(self):
        with pytest.raises(ScheduleError):
            CycleSchedule.from_lists([1, 1], [0], [0, 0], [1, 1])

    def test_empty(self):
        with pytest.raises(ScheduleError):
            CycleSchedule(())

    def test_with_epochs(self):
        tiny = CycleSchedule.default().with_epochs([3, 3, 2, 2, 2, 2, 2, 2, 2], [1] * 9)
        assert tiny.rows()["candidates"] == [6, 6, 6, 6, 6, 4, 3, 2, 1]
        assert tiny.total_epochs == 3 + 3 + 7 * 2 == 20


# ---------------------------------------------------------------- prune

class TestPrune:
    def test_top_by_alpha(self):
        conv = sep_conv(5, 1, ())
        pruned = prune_edge(pool_of([(conv, 2.0), (max_pool(3), 1.0), (identity(), 0.5)]), 2, False)
        assert set(pruned.candidates) == {conv, max_pool(3)}

    def test_conv_guarantee(self):
        conv = sep_conv(5, 1, ())
        pruned = prune_edge(pool_of([(max_pool(3), 3.0), (avg_pool(3), 2.0), (conv, -1.0)]), 2, False)
        assert set(pruned.candidates) == {max_pool(3), conv}

    def test_final_prune_waives_guarantee(self):
        conv = sep_conv(5, 1, ())
        pruned = prune_edge(pool_of([(max_pool(3), 3.0), (avg_pool(3), 2.0), (conv, -1.0)]), 1, True)
        assert pruned.candidates == [max_pool(3)]

    def test_guarantee_with_keep_one(self):
        pruned = prune_edge(pool_of([(identity(), 1.0), (ROOT, 0.0)]), 1, False)
        assert pruned.candidates == [ROOT]

    @pytest.mark.parametrize("keep", [0, 4])
    def test_keep_out_of_range(self, keep):
        with pytest.raises(ValueError):
            prune_edge(pool_of([(identity(), 0.0), (ROOT, 0.0), (max_pool(3), 0.0)]), keep, False)

    def test_history_kept(self):
        pool = pool_of([(identity(), 1.0), (ROOT, 0.0)])
        assert prune_edge(pool, 1, True).history == pool.history

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.sampled_from(SPECS), min_size=1, max_size=8, unique=True), st.data())
    def test_prune_properties(self, specs, data):
        alphas = data.draw(st.lists(st.floats(-5, 5), min_size=len(specs), max_size=len(specs)))
        keep = data.draw(st.integers(1, len(specs)))
        final = data.draw(st.booleans())
        pool = EdgePool(specs, np.array(alphas))
        pruned = prune_edge(pool, keep, final)
        assert len(pruned) == keep
        assert len(set(pruned.candidates)) == keep
        assert set(pruned.candidates) <= set(specs)
        if not final and any(s.is_conv for s in specs):
            assert any(s.is_conv for s in pruned.candidates)
        if final:
            top = sorted(range(len(specs)), key=lambda i: (-alphas[i], i))[:keep]
            assert set(pruned.candidates) == {specs[i] for i in top}


# ---------------------------------------------------------------- replace

class TestReplace:
    def test_dl_root_children(self, rng):
        grown, report = replace_edge(EdgePool([ROOT]), 3, DL, rng=rng)
        children = {c for _, _, c in report.children}
        assert children == {sep_conv(5, 1, ()), sep_conv(3, 2, ()), sep_conv(3, 1, (1,))}
        assert len(grown) == 4 and report.missing == 0 and report.reused == 0

    def test_alphas_reset(self, rng):
        pool = pool_of([(ROOT, 1.5), (identity(), -2.0)])
        grown, report = replace_edge(pool, 0, DL, rng=rng)
        assert grown.candidates == pool.candidates
        assert np.all(grown.alphas.data == 0.0) and not report.children

    def test_exhaustion_warns(self, rng, caplog):
        box = SpaceConstraints(3, 5, 1, 1, 0, 0)
        pool = EdgePool([sep_conv(3, 1, ()), sep_conv(5, 1, ())])
        with caplog.at_level(logging.WARNING, logger="morphnas.search"):
            grown, report = replace_edge(pool, 1, box, rng=rng)
        assert report.missing == 1 and report.exhausted
        assert grown.candidates == pool.candidates
        assert "no new child" in caplog.text

    def test_reuses_seen_child_when_nothing_new(self, rng):
        box = SpaceConstraints(3, 5, 1, 1, 0, 0)
        pool = EdgePool([sep_conv(3, 1, ())], history={"conv_k5_d1_m[]"})
        grown, report = replace_edge(pool, 1, box, rng=rng)
        assert report.reused == 1 and report.missing == 0
        assert grown.candidates == [sep_conv(3, 1, ()), sep_conv(5, 1, ())]

    def test_morphs_this_steps_children_last(self, rng):
        # the only parent's only morph is already present after the first slot; the second slot
        # morphs the new child instead
        box = SpaceConstraints(3, 7, 1, 1, 0, 0)
        grown, report = replace_edge(EdgePool([sep_conv(3, 1, ())]), 2, box, rng=rng)
        assert [c.canonical() for c in grown.candidates] == ["conv_k3_d1_m[]", "conv_k5_d1_m[]",
                                                              "conv_k7_d1_m[]"]
        assert report.children[1][0] == sep_conv(5, 1, ())

    def test_no_morphable_candidate(self, rng):
        with pytest.raises(ScheduleError):
            replace_edge(EdgePool([identity(), max_pool(3)]), 1, DL, rng=rng)

    def test_parent_sampling_follows_softmax(self):
        a, b = sep_conv(3, 1, ()), sep_conv(7, 2, (1,))
        pool = pool_of([(a, np.log(3.0)), (b, 0.0)])
        counts = {a: 0, b: 0}
        rng = np.random.default_rng(0)
        for _ in range(2000):
            _, report = replace_edge(pool, 1, DL, rng=rng)
            counts[report.children[0][0]] += 1
        assert counts[a] / 2000 == pytest.approx(0.75, abs=0.03)

    def test_child_weights_from_parent(self):
        store = WeightStore()
        parent_weights = fresh_weights(ROOT, 4, 1, np.random.default_rng(0))
        store.put(NORMAL, 4, (2, 0), ROOT, parent_weights)
        grown, report = replace_edge(EdgePool([ROOT]), 2, DL, store, np.random.default_rng(5),
                                     [(NORMAL, 4, (2, 0))])
        for parent, action, child in report.children:
            expected = apply_morph(parent, action, parent_weights, np.random.default_rng(0))[1]
            stored = store.get(NORMAL, 4, (2, 0), child)
            assert stored is not None
            if action.move in ("kernel+", "dilation+", "dilation-", "kernel-"):
                for name in expected:
                    assert np.array_equal(stored[name].data, expected[name].data)

    def test_missing_parent_weights(self, rng):
        with pytest.raises(ScheduleError):
            replace_edge(EdgePool([ROOT]), 1, DL, WeightStore(), rng, [(NORMAL, 4, (2, 0))])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 4))
    def test_no_duplicates(self, seed, n):
        pool = EdgePool([ROOT, sep_conv(5, 1, ()), identity()])
        grown, report = replace_edge(pool, n, preset("UR"), rng=np.random.default_rng(seed))
        names = grown.names()
        assert len(names) == len(set(names))
        assert len(grown) == 3 + n - report.missing
        assert set(names) <= grown.history


# ---------------------------------------------------------------- full loop

def _capture_grace(monkeypatch):
    events = []
    real_loss, real_eval = search_module.batch_loss, search_module.evaluate

    def loss(model, *args, **kwargs):
        events.append(("step", [a.data.copy() for a in model.alpha_parameters()]))
        return real_loss(model, *args, **kwargs)

    def evaluate(model, *args, **kwargs):
        events.append(("epoch", [a.data.copy() for a in model.alpha_parameters()]))
        return real_eval(model, *args, **kwargs)

    monkeypatch.setattr(search_module, "batch_loss", loss)
    monkeypatch.setattr(search_module, "evaluate", evaluate)
    return events


class TestRunSearch:
    def test_grace_alphas_frozen(self, halves, monkeypatch):
        schedule = CycleSchedule.from_lists([3, 2], [2, 1], [3, 0], [6, 1])
        events = _capture_grace(monkeypatch)
        result = run_search(mini_config(schedule), *halves)
        epochs, current = [], []
        for kind, alphas in events:
            current.append(alphas)
            if kind == "epoch":
                epochs.append(current)
                current = []
        phases = [r.phase for r in result.metrics.epochs]
        assert phases == ["grace", "grace", "joint", "grace", "joint"]
        for snapshots, phase in zip(epochs, phases):
            if phase == "grace":
                for alphas in snapshots:
                    assert all(np.array_equal(a, np.zeros_like(a)) for a in alphas)
        joint = epochs[2][-1]
        assert any(np.any(a != 0) for a in joint)

    def test_pool_sizes_and_finalize(self, halves, tmp_path):
        result = run_search(mini_config(), *halves, run_dir=tmp_path)
        for cycle, target in enumerate([6, 2, 1]):
            for kind in ("normal", "reduction"):
                snapshot = read_cell(tmp_path / "cells" / f"cycle_{cycle:02d}_{kind}.json")
                assert {len(p) for p in snapshot.edges.values()} == {target}
        for cell in (result.normal, result.reduction):
            assert cell.is_finalized()
            for j in cell.node_ids:
                assert len(cell.incoming(j)) == 2
        assert (tmp_path / "final" / "normal.json").is_file()
        assert (tmp_path / "cells" / "cycle_00_normal.dot").is_file()
        assert checkpoint_path(tmp_path, 2).is_file()
        assert len((tmp_path / "metrics" / EPOCH_FILE).read_text().splitlines()) == 4

    def test_degenerate_single_cycle(self, halves):
        schedule = CycleSchedule.from_lists([1], [0], [0], [1])
        result = run_search(mini_config(schedule), *halves)
        pre = result.state.final_alphas
        for cell, raw in ((result.normal, pre["normal"]), (result.reduction, pre["reduction"])):
            before = CellGraph.from_dict(raw)
            for key, pool in cell.edges.items():
                best = before.edges[key]
                assert pool.candidates == [best.candidates[int(np.argmax(best.alphas.data))]]

    def test_resume_equals_continuation(self, halves, tmp_path):
        full, split = tmp_path / "full", tmp_path / "split"
        a = run_search(mini_config(), *halves, run_dir=full)
        partial = run_search(mini_config(), *halves, run_dir=split, stop_after=1)
        assert partial.normal is None and partial.state.cycle == 1
        b = run_search(mini_config(), *halves, run_dir=split, resume=True)
        assert a.normal == b.normal and a.reduction == b.reduction
        for name in ("metrics/" + EPOCH_FILE, "metrics/" + CYCLE_FILE, "checkpoints/latest.json",
                     "final/normal.json", "final/reduction.dot"):
            assert (full / name).read_bytes() == (split / name).read_bytes(), name

    def test_state_round_trip(self, halves, tmp_path):
        result = run_search(mini_config(), *halves, run_dir=tmp_path, stop_after=2)
        loaded = SearchState.load(checkpoint_path(tmp_path), mini_config())
        assert loaded.normal == result.state.normal
        assert loaded.rng.bit_generator.state == result.state.rng.bit_generator.state
        arrays = loaded.network.state_arrays()
        for key, value in result.state.network.state_arrays().items():
            assert np.array_equal(arrays[key], value)

    def test_corrupted_checkpoint(self, halves, tmp_path):
        run_search(mini_config(), *halves, run_dir=tmp_path, stop_after=1)
        path = checkpoint_path(tmp_path)
        text = path.read_text()
        path.write_text(text.replace('"epoch": 1', '"epoch": 2', 1))
        with pytest.raises(CheckpointError, match="integrity"):
            run_search(mini_config(), *halves, run_dir=tmp_path, resume=True)

    def test_rejects_mismatched_halves(self, halves):
        a, _ = halves
        other = synthetic_dataset(3, 12, 8, seed=0)
        with pytest.raises(ValueError):
            run_search(mini_config(), a, other)

    def test_seeds_differ(self, halves):
        a = run_search(mini_config(seed=0), *halves)
        b = run_search(mini_config(seed=1), *halves)
        assert a.metrics.epochs != b.metrics.epochs
