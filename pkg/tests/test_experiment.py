import numpy as np
import pytest

from leakloc import fixtures
from leakloc.dataset import DatasetConfig, generate_dataset
from leakloc.errors import DimensionMismatch, IntegrityError, MissingGroundTruth, SensorMismatch, UnknownNode
from leakloc.experiment import (
    AWGSI,
    GSI,
    EvalReport,
    Hyper,
    Interpolated,
    TrainedModel,
    apply_pipeline,
    baseline_distance_localizer,
    evaluate_cell,
    head_and_residual_errors,
    localization_accuracy,
    rmse,
    train_pipeline,
    vs_sweep,
)

SENSORS = ("R", "J0_2", "J2_0", "J2_2")


@pytest.fixture(scope="module")
def separable(grid3):
    # three far-apart leak nodes, no uncertainty: training accuracy is 100%
    cfg = DatasetConfig(sensors=SENSORS, leak_nodes=("J0_2", "J2_0", "J2_2"), n_t=2, seed=1)
    return generate_dataset(grid3, fixtures.diurnal_pattern(), cfg)


@pytest.fixture(scope="module")
def separable_model(separable):
    return train_pipeline(separable, n_vs=2)


class TestRmse:
    def test_equal(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_example(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))

    def test_permutation(self, rng):
        x, y = rng.standard_normal(9), rng.standard_normal(9)
        p = rng.permutation(9)
        assert rmse(x[p], y[p]) == pytest.approx(rmse(x, y), rel=1e-14)

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            rmse([1.0], [1.0, 2.0])


class TestAccuracy:
    def test_hand_enumeration(self, grid3):
        # hops: J0_0-J0_1 = 1, J1_1-J2_2 = 2, J2_2-J2_2 = 0, J0_0-J2_2 = 4
        pred = ["J0_0", "J1_1", "J2_2", "J0_0"]
        truth = ["J0_1", "J2_2", "J2_2", "J2_2"]
        expected = {0: 25.0, 1: 50.0, 2: 75.0, 3: 75.0, 4: 100.0}
        for k, acc in expected.items():
            assert localization_accuracy(pred, truth, grid3, k) == pytest.approx(acc)

    def test_truth(self, grid3):
        ids = grid3.node_ids[1:]
        assert all(localization_accuracy(ids, ids, grid3, k) == 100.0 for k in range(3))

    def test_diameter(self, grid3, rng):
        diam = int(grid3.hop_matrix.max())
        pred = list(rng.choice(grid3.node_ids, 20))
        truth = list(rng.choice(grid3.node_ids, 20))
        assert localization_accuracy(pred, truth, grid3, diam) == 100.0

    def test_monotone_in_depth(self, grid3, rng):
        pred = list(rng.choice(grid3.node_ids, 30))
        truth = list(rng.choice(grid3.node_ids, 30))
        accs = [localization_accuracy(pred, truth, grid3, k) for k in range(6)]
        assert accs == sorted(accs)

    def test_errors(self, grid3):
        with pytest.raises(UnknownNode):
            localization_accuracy(["nope"], ["R"], grid3, 0)
        with pytest.raises(ValueError):
            localization_accuracy(["R"], ["R"], grid3, -1)


class TestBaseline:
    def test_unique_minimum(self, grid3):
        r = np.zeros(grid3.n)
        r[grid3.index("J1_2")] = -0.3
        assert baseline_distance_localizer(r, grid3) == grid3.index("J1_2")

    def test_tie_lowest_index(self, grid3):
        r = np.zeros(grid3.n)
        r[[4, 7]] = -1.0
        assert baseline_distance_localizer(r, grid3) == 4

    def test_reservoir_ignored(self, grid3):
        r = np.zeros(grid3.n)
        r[grid3.index("R")] = -5.0
        r[3] = -1.0
        assert baseline_distance_localizer(r, grid3) == 3


class TestErrors:
    def test_perfect_oracle(self, separable):
        ds = separable
        res = ds.leak_full - ds.nominal_full
        perfect = Interpolated(res, ds.leak_full, ds.nominal_full)
        for method in (GSI, AWGSI):
            t = head_and_residual_errors(ds, method, perfect)
            np.testing.assert_allclose(t.head, 0.0, atol=1e-12)
            np.testing.assert_allclose(t.residual, 0.0, atol=1e-12)

    def test_finite_nonnegative(self, separable):
        for method in (GSI, AWGSI):
            t = head_and_residual_errors(separable, method)
            assert np.all(np.isfinite(t.head)) and np.all(t.residual >= 0)
            assert len(t.to_rows(method=method)) == 3

    def test_missing_ground_truth(self, separable):
        from dataclasses import replace

        with pytest.raises(MissingGroundTruth):
            head_and_residual_errors(replace(separable, leak_full=None), GSI)


class TestPipeline:
    def test_model_rows(self, separable, separable_model):
        assert separable_model.n_ts == 6 == separable_model.triple.D.shape[0]
        assert len(separable_model.virtual) == 2
        m0 = train_pipeline(separable, n_vs=0)
        assert m0.triple.D.shape[0] == len(SENSORS)

    def test_all_nodes_sensed(self, separable, grid3):
        m = train_pipeline(separable, n_vs=grid3.n - len(SENSORS), hyper=Hyper(K=2))
        assert m.triple.D.shape[0] == grid3.n

    def test_n_vs_bounds(self, separable, grid3):
        with pytest.raises(ValueError):
            train_pipeline(separable, n_vs=grid3.n - len(SENSORS) + 1)
        with pytest.raises(ValueError):
            train_pipeline(separable, n_vs=-1)

    def test_training_replay(self, separable, separable_model):
        tr = separable.train_set()
        pred = apply_pipeline(separable_model, tr.nominal_sensor, tr.leak_sensor)
        np.testing.assert_array_equal(pred.classes, tr.labels)

    def test_batch_equals_columns(self, separable, separable_model):
        te = separable.test_set()
        batch = apply_pipeline(separable_model, te.nominal_sensor, te.leak_sensor, threads=4)
        for j in range(0, te.n_samp, 5):
            one = apply_pipeline(separable_model, te.nominal_sensor[:, j], te.leak_sensor[:, j])
            assert one.classes[0] == batch.classes[j]
            np.testing.assert_allclose(one.scores[:, 0], batch.scores[:, j], atol=1e-12)

    def test_degenerate(self, separable, separable_model):
        nom = separable.nominal_sensor[:, 0]
        pred = apply_pipeline(separable_model, nom, nom)
        assert pred.degenerate.tolist() == [True]

    def test_sensor_mismatch(self, separable_model):
        with pytest.raises(SensorMismatch):
            apply_pipeline(separable_model, np.zeros(3), np.zeros(3))

    def test_retrain_identical(self, separable, separable_model):
        assert train_pipeline(separable, n_vs=2).content_hash() == separable_model.content_hash()

    def test_save_load(self, separable_model, tmp_path):
        h = separable_model.save(tmp_path / "m")
        back = TrainedModel.load(tmp_path / "m")
        assert back.content_hash() == h
        (tmp_path / "m" / "sigma.bin").write_bytes(b"WDNMAT01junk")
        with pytest.raises(IntegrityError):
            TrainedModel.load(tmp_path / "m")


@pytest.fixture(scope="module")
def sweep(separable):
    return vs_sweep({0.0: separable}, [0, 2])


class TestSweep:
    def test_cells(self, sweep):
        report, timings = sweep
        assert len(report.cells) == 4 and len(timings) == 4
        for c in report.cells:
            assert c["status"] == "ok"
            acc = [c["accuracy"][k] for k in ("0", "1", "2")]
            assert acc == sorted(acc) and all(0 <= a <= 100 for a in acc)

    def test_single_cell_matches_direct(self, separable):
        report, _ = vs_sweep({0.0: separable}, [0], methods=[AWGSI])
        model = train_pipeline(separable, n_vs=0, method=AWGSI)
        te = separable.test_set()
        pred = apply_pipeline(model, te.nominal_sensor, te.leak_sensor)
        truth = [separable.leak_nodes[c] for c in te.labels]
        cell = report.cell(0.0, AWGSI, 0)
        for k in (0, 1, 2):
            assert cell["accuracy"][str(k)] == localization_accuracy(pred.nodes, truth, separable.network, k)

    def test_json_round_trip(self, sweep, tmp_path):
        report, _ = sweep
        back = EvalReport.from_json(report.to_json())
        assert back.content_hash() == report.content_hash()
        report.save(tmp_path)
        rows = (tmp_path / "accuracy.csv").read_text().splitlines()
        assert len(rows) == 1 + 4 * 3

    def test_unsorted(self, separable):
        with pytest.raises(ValueError):
            vs_sweep({0.0: separable}, [2, 0])

    def test_evaluate_depths(self, separable, separable_model):
        from leakloc.experiment import Interpolator

        te = separable.test_set()
        res = Interpolator(separable.network, SENSORS, AWGSI).batch(te.nominal_sensor, te.leak_sensor).residual
        cell = evaluate_cell(separable_model, te, res, [0, 1, 2])
        assert sorted(cell["accuracy"]) == ["0", "1", "2"] and cell["n_test"] == te.n_samp
