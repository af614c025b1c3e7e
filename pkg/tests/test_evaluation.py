import numpy as np
import pytest

from ntm_arith import controller as ctl
from ntm_arith import evaluation as evl
from ntm_arith import tasks

TINY = ctl.ControllerSpec(kind="ff", hidden_size=8, mem_rows=16, mem_cols=8)


def test_oracle_stub_scores_zero_everywhere():
    report = evl.evaluate_generalization(evl.OracleStub("add"),
                                         lengths=(1, 3, 8, 12), trials=20,
                                         rng=np.random.default_rng(0))
    for row in report:
        assert row.mean_bits_error == 0.0
        assert row.std_bits_error == 0.0
        assert row.trials == 20


def test_flip_stub_scores_exactly_one():
    for kind in tasks.KINDS:
        report = evl.evaluate_generalization(evl.SingleBitFlipStub(kind),
                                             lengths=(2, 5, 9), trials=15,
                                             rng=np.random.default_rng(1))
        for row in report:
            assert row.mean_bits_error == 1.0
            assert row.std_bits_error == 0.0


def test_report_deterministic_given_seed():
    rows1 = evl.evaluate_generalization(evl.SingleBitFlipStub("add"), (4, 6), 10,
                                        np.random.default_rng(7))
    rows2 = evl.evaluate_generalization(evl.SingleBitFlipStub("add"), (4, 6), 10,
                                        np.random.default_rng(7))
    assert evl.format_report(rows1) == evl.format_report(rows2)


def test_report_mean_invariant_under_trial_order():
    """The aggregation is a plain mean, so shuffling per-trial errors cannot
    change the reported value."""

    class RecordingRunner:
        task = "add"

        def __init__(self):
            self.errors = []

        def run(self, example):
            out = example.targets.copy()
            flips = len(self.errors) % 3
            for ch in range(flips):
                out[0, ch] = 1.0 - out[0, ch]
            self.errors.append(flips)
            return out

    runner = RecordingRunner()
    rows = evl.evaluate_generalization(runner, (5,), 30, np.random.default_rng(2))
    rng = np.random.default_rng(3)
    shuffled = np.array(runner.errors, dtype=np.float64)
    rng.shuffle(shuffled)
    assert abs(rows[0].mean_bits_error - float(np.mean(shuffled))) < 1e-12
    assert abs(rows[0].std_bits_error - float(np.std(shuffled))) < 1e-12


def test_report_format_and_write(tmp_path):
    rows = evl.evaluate_generalization(evl.OracleStub("mul"), (2, 3), 4,
                                       np.random.default_rng(4))
    path = tmp_path / "report.csv"
    evl.write_report(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == evl.REPORT_HEADER
    assert lines[1].startswith("2,4,")
    assert lines[2].startswith("3,4,")


def test_default_lengths_and_trials():
    assert evl.DEFAULT_LENGTHS == (8, 10, 12, 16, 20, 24, 28, 32, 36, 42, 48)
    assert evl.DEFAULT_TRIALS == 100


def test_evaluate_rejects_zero_trials():
    with pytest.raises(ValueError):
        evl.evaluate_generalization(evl.OracleStub("add"), (2,), 0,
                                    np.random.default_rng(0))


def test_network_runner_emits_probabilities():
    model = ctl.build_model(TINY, seed=5)
    runner = evl.NetworkRunner(model, "add")
    ex = tasks.make_example(3, 2, 2, "add")
    out = runner.run(ex)
    assert out.shape == ex.targets.shape
    assert np.all((out > 0) & (out < 1))


def test_lengths_beyond_memory_rows_still_run():
    # 20-bit operands against 16 memory rows: degraded, not rejected
    model = ctl.build_model(TINY, seed=6)
    report = evl.evaluate_generalization(evl.NetworkRunner(model, "add"),
                                         lengths=(20,), trials=2,
                                         rng=np.random.default_rng(7))
    assert report[0].mean_bits_error >= 0.0


# --- traces ---

def test_record_trace_shapes_and_marker():
    model = ctl.build_model(TINY, seed=8)
    ex = tasks.make_example(11, 6, 4, "add")
    trace = evl.record_trace(model, ex)
    steps = ex.inputs.shape[0] + ex.targets.shape[0]
    assert trace.read_weights.shape == (steps, TINY.mem_rows)
    assert trace.write_weights.shape == (steps, TINY.mem_rows)
    assert trace.input_end_index == ex.inputs.shape[0] - 1
    assert np.array_equal(ex.inputs[trace.input_end_index],
                          tasks.encode_symbol(tasks.Symbol.END))


def test_trace_rows_normalized():
    model = ctl.build_model(TINY, seed=9)
    trace = evl.record_trace(model, tasks.make_example(5, 5, 3, "mul"))
    for mat in (trace.read_weights, trace.write_weights):
        sums = mat.sum(axis=1)
        assert np.all(np.abs(sums - 1.0) < 1e-6)
        assert np.all(mat >= -1e-6)


def test_record_trace_deterministic():
    ex = tasks.make_example(9, 3, 4, "add")
    traces = []
    for _ in range(2):
        model = ctl.build_model(TINY, seed=10)
        traces.append(evl.record_trace(model, ex))
    assert np.array_equal(traces[0].read_weights, traces[1].read_weights)
    assert np.array_equal(traces[0].write_weights, traces[1].write_weights)


def test_record_trace_rejects_memoryless_model():
    base = ctl.default_spec("baseline")
    spec = ctl.ControllerSpec(kind="baseline", hidden_size=8,
                              num_layers=base.num_layers, mem_rows=0, mem_cols=0)
    model = ctl.build_model(spec, seed=11)
    with pytest.raises(ValueError):
        evl.record_trace(model, tasks.make_example(1, 1, 1, "add"))


# --- exports ---

def test_pixel_mapping_extremes_and_midpoint():
    w = np.array([[0.0, 0.5, 1.0]])
    assert list(evl._weights_to_pixels(w)[0]) == [0, 128, 255]


def test_pgm_round_trip_exact(tmp_path):
    rng = np.random.default_rng(12)
    w = rng.uniform(0, 1, (7, 5))
    w /= w.sum(axis=1, keepdims=True)
    path = tmp_path / "w.pgm"
    evl.write_pgm(path, w)
    img = evl.read_pgm(path)
    # image is rows x time; trace matrix is time x rows
    assert img.shape == (5, 7)
    assert np.array_equal(img, np.floor(255.0 * w + 0.5).astype(np.uint8).T)


def test_export_heatmap_writes_all_files(tmp_path):
    model = ctl.build_model(TINY, seed=13)
    ex = tasks.make_example(3, 1, 2, "add")
    trace = evl.record_trace(model, ex)
    out = tmp_path / "trace"
    paths = evl.export_heatmap(trace, out)
    assert sorted(p.name for p in out.iterdir()) == sorted(evl.TRACE_FILES)

    marker = int((out / "marker.txt").read_text().strip())
    assert marker == trace.input_end_index

    for name, mat in (("read_weights.csv", trace.read_weights),
                      ("write_weights.csv", trace.write_weights)):
        lines = (out / name).read_text().splitlines()
        parsed = np.array([[float(v) for v in ln.split(",")] for ln in lines])
        assert np.array_equal(parsed, mat)
        assert np.all(np.abs(parsed.sum(axis=1) - 1.0) < 1e-6)

    for name, mat in (("read_weights.pgm", trace.read_weights),
                      ("write_weights.pgm", trace.write_weights)):
        img = evl.read_pgm(out / name)
        assert np.array_equal(img, np.floor(255.0 * mat + 0.5).astype(np.uint8).T)
    assert [str(p) for p in paths] == [str(out / n) for n in evl.TRACE_FILES]


def test_read_pgm_rejects_other_formats(tmp_path):
    path = tmp_path / "x.pgm"
    path.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(ValueError):
        evl.read_pgm(path)
