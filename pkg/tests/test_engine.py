import numpy as np
import pytest

from dmle_lab import acquisition as acq
from dmle_lab import data, engine, estimation, selection


def tiny_config(estimator="dmle", cycles=4, k=1, strategy="ssms",
                acquisition="entropy", epochs=4, emit_log_z=False, n=80):
    return engine.ExperimentConfig(
        dataset=data.DatasetSpec(name="two-arcs", n_samples=n, seed=1),
        acquisition=acq.AcquisitionKind(acquisition, bald_samples=4),
        selection=selection.SelectionConfig(strategy, k=k, beta=1.0),
        estimator=estimation.EstimatorConfig(estimator=estimator,
                                             epochs_per_cycle=epochs),
        cycles=cycles, emit_log_z=emit_log_z)


class TestRunShape:
    def test_curve_length_and_labeled_counts(self):
        res = engine.run_active_learning(tiny_config(cycles=5, k=2), seed=0)
        assert res.status == "ok"
        assert len(res.curve) == 6  # cycle 0 included
        for row in res.curve:
            assert row.n_labeled == 1 + row.cycle * 2
            assert 0.0 <= row.test_acc <= 1.0

    def test_hundred_labels_regime(self):
        """99 cycles of one sample end at exactly 100 labeled."""
        config = tiny_config(cycles=99, k=1, epochs=1, n=200)
        res = engine.run_active_learning(config, seed=3)
        assert len(res.curve) == 100
        assert res.curve[-1].n_labeled == 100

    def test_ledger_reconstructs_labeled_set(self):
        res = engine.run_active_learning(tiny_config(cycles=6, k=3), seed=1)
        n_train = res.dataset.splits["train"].size
        union = res.ledger.labeled_union()
        assert len(set(union.tolist())) == union.size == 1 + 6 * 3
        # every non-initial labeled sample appears in exactly one record
        seen = [i for r in res.ledger.active() for i in r.ordered_selected]
        assert len(seen) == len(set(seen)) == 18
        # pool/labeled snapshots stay disjoint and within the train split
        train = set(res.dataset.splits["train"].tolist())
        for rec in res.ledger.records:
            assert set(rec.pool_snapshot.tolist()) <= train
            assert not (set(rec.pool_snapshot.tolist())
                        & set(rec.labeled_snapshot.tolist()))

    def test_pool_exhaustion_rejected_before_running(self):
        config = tiny_config(cycles=200, k=2, n=60)  # needs 401 > 42 train
        with pytest.raises(engine.ConfigError, match="exceeds"):
            engine.run_active_learning(config, seed=0)


class TestDeterminism:
    def test_identical_config_and_seed_reproduce_curve_bytes(self):
        config = tiny_config(cycles=5, k=2)
        a = engine.run_active_learning(config, seed=7)
        b = engine.run_active_learning(config, seed=7)
        assert engine.curve_csv_text(a.curve) == engine.curve_csv_text(b.curve)

    def test_different_seeds_differ(self):
        config = tiny_config(cycles=5, k=2)
        a = engine.run_active_learning(config, seed=0)
        b = engine.run_active_learning(config, seed=1)
        assert engine.curve_csv_text(a.curve) != engine.curve_csv_text(b.curve)


class TestOracleDiscipline:
    def test_label_reads_stay_within_revealed_and_test_sets(self):
        reads: list[np.ndarray] = []

        class TrackedLabels(np.ndarray):
            def __getitem__(self, item):
                if isinstance(item, (np.ndarray, list)):
                    reads.append(np.asarray(item))
                return super().__getitem__(item)

        config = tiny_config(cycles=4, k=2)
        dataset = data.build_dataset(config.dataset)
        dataset.y = dataset.y.view(TrackedLabels)
        res = engine.run_active_learning(config, seed=2, dataset=dataset)
        allowed = set(res.ledger.labeled_union().tolist())
        allowed |= set(dataset.splits["test"].tolist())
        for read in reads:
            assert set(np.asarray(read).ravel().tolist()) <= allowed

    def test_never_reads_unlabeled_train_labels(self):
        config = tiny_config(cycles=3, k=1)
        dataset = data.build_dataset(config.dataset)
        res = engine.run_active_learning(config, seed=5, dataset=dataset)
        labeled = set(res.ledger.labeled_union().tolist())
        unlabeled = set(dataset.splits["train"].tolist()) - labeled
        assert unlabeled  # the run must leave most of the pool untouched


class TestCurveFile:
    def test_header_is_pinned(self):
        assert engine.CURVE_HEADER == ("cycle,n_labeled,test_acc,nll,dependency,"
                                       "sum_logZ,acq_s,sel_s,train_s")

    def test_log_z_cells_written_when_enabled(self):
        res = engine.run_active_learning(tiny_config(cycles=3, emit_log_z=True),
                                         seed=0)
        text = engine.curve_csv_text(res.curve)
        lines = text.strip().splitlines()
        assert lines[0] == engine.CURVE_HEADER
        for line in lines[2:]:
            cells = line.split(",")
            assert cells[5] != ""
            assert np.isfinite(float(cells[5]))

    def test_timing_cells_empty_by_default_but_available(self):
        res = engine.run_active_learning(tiny_config(cycles=2), seed=0)
        default = engine.curve_csv_text(res.curve).strip().splitlines()[1]
        assert default.endswith(",,,")
        timed = engine.curve_csv_text(res.curve, timings_in_curve=True)
        last_cells = timed.strip().splitlines()[-1].split(",")
        assert all(c != "" for c in last_cells[6:9])

    def test_run_outputs_write_exactly_one_manifest_and_curve(self, tmp_path):
        config = tiny_config(cycles=2)
        res = engine.run_active_learning(config, seed=0)
        engine.write_run_outputs(tmp_path / "cell", config, 0, res, "0.0-test")
        files = sorted(p.name for p in (tmp_path / "cell").iterdir())
        assert files == ["curve.csv", "manifest.json", "params.json"]

    def test_manifest_records_config_seed_and_timings(self, tmp_path):
        import json
        config = tiny_config(cycles=2)
        res = engine.run_active_learning(config, seed=9)
        engine.write_run_outputs(tmp_path / "cell", config, 9, res, "0.0-test")
        manifest = json.loads((tmp_path / "cell" / "manifest.json").read_text())
        assert manifest["seed"] == 9
        assert manifest["status"] == "ok"
        assert manifest["config"]["cycles"] == 2
        assert len(manifest["timings_s"]["train"]) == len(res.curve)
        assert manifest["dataset_provenance"]["n_classes"] == 2


class TestFailurePath:
    def test_diverged_training_flags_the_run(self, monkeypatch):
        config = tiny_config(cycles=4)
        calls = {"n": 0}
        real = estimation.train_cycle

        def explode_on_third(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 3:
                raise estimation.TrainingDiverged("synthetic blow-up")
            return real(*args, **kwargs)

        monkeypatch.setattr(engine.estimation, "train_cycle", explode_on_third)
        res = engine.run_active_learning(config, seed=0)
        assert res.status == "failed"
        assert "blow-up" in res.error
        assert np.isnan(res.curve[-1].test_acc)  # partial curve flagged
        assert res.params is None


class TestArchitectureDefaults:
    @pytest.mark.parametrize("name,expected", [
        ("iris", ([4, 16, 3], "relu")),
        ("two-arcs", ([2, 16, 2], "tanh")),
        ("mnist", ([784, 64, 10], "relu")),
        ("digits", ([64, 32, 10], "relu")),
    ])
    def test_per_dataset_architecture(self, name, expected):
        d_x, k = expected[0][0], expected[0][-1]
        assert engine.default_architecture(name, d_x, k) == expected

    def test_hidden_override(self):
        dims, act = engine.default_architecture("iris", 4, 3, hidden_dims=[32, 8])
        assert dims == [4, 32, 8, 3] and act == "relu"
