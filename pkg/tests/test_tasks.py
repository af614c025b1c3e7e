import numpy as np
import pytest

from ntm_arith import tasks
from ntm_arith.tasks import Symbol


def test_symbol_encoding_table():
    assert np.array_equal(tasks.encode_symbol(Symbol.ZERO), [0, 0, 0])
    assert np.array_equal(tasks.encode_symbol(Symbol.ONE), [1, 0, 0])
    assert np.array_equal(tasks.encode_symbol(Symbol.OP), [0, 1, 0])
    assert np.array_equal(tasks.encode_symbol(Symbol.END), [0, 0, 1])


def test_little_endian_known_values():
    assert tasks.to_little_endian(35, 6) == [1, 1, 0, 0, 0, 1]
    assert tasks.to_little_endian(0, 4) == [0, 0, 0, 0]
    assert tasks.to_little_endian(11, 5) == [1, 1, 0, 1, 0]


def test_little_endian_rejects_overflow_and_negatives():
    with pytest.raises(ValueError):
        tasks.to_little_endian(16, 4)
    with pytest.raises(ValueError):
        tasks.to_little_endian(-1, 4)
    with pytest.raises(ValueError):
        tasks.to_little_endian(0, 0)


def test_little_endian_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(500):
        length = int(rng.integers(1, 40))
        n = int(rng.integers(0, 1 << length))
        assert tasks.from_little_endian(tasks.to_little_endian(n, length)) == n


def test_oracle_add_examples():
    # 4 + 2 = 6 with the carry position appended
    assert tasks.oracle_add([0, 0, 1], [0, 1, 0]) == [0, 1, 1, 0]
    assert tasks.oracle_add([0, 0], [0, 0]) == [0, 0, 0]
    with pytest.raises(ValueError):
        tasks.oracle_add([1], [1, 0])


def test_oracle_mul_examples():
    assert tasks.oracle_mul([1, 0, 1], [0, 0, 0]) == [0] * 6
    assert tasks.oracle_mul([1, 0], [1, 0]) == [1, 0, 0, 0]
    with pytest.raises(ValueError):
        tasks.oracle_mul([1], [1, 0])


def test_oracles_exhaustive_8bit():
    """Both bit-level algorithms agree with big-integer arithmetic on every
    pair of 8-bit operands."""
    for a in range(256):
        abits = tasks.to_little_endian(a, 8)
        for b in range(256):
            bbits = tasks.to_little_endian(b, 8)
            s = tasks.oracle_add(abits, bbits)
            assert tasks.from_little_endian(s) == a + b
            assert len(s) == 9
            p = tasks.oracle_mul(abits, bbits)
            assert tasks.from_little_endian(p) == a * b
            assert len(p) == 16


def test_oracles_random_wide_operands():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        length = int(rng.integers(1, 49))
        a = int(rng.integers(0, 1 << length))
        b = int(rng.integers(0, 1 << length))
        abits = tasks.to_little_endian(a, length)
        bbits = tasks.to_little_endian(b, length)
        assert tasks.from_little_endian(tasks.oracle_add(abits, bbits)) == a + b
        assert tasks.from_little_endian(tasks.oracle_mul(abits, bbits)) == a * b


def check_example_invariants(ex: tasks.TaskExample):
    l1, l2 = len(ex.operand1), len(ex.operand2)
    l = max(l1, l2)
    assert ex.inputs.shape == (l1 + l2 + 2, 3)
    expected_rows = (l + 2) if ex.kind == "add" else (2 * l + 1)
    assert ex.targets.shape == (expected_rows, 3)
    # input layout: operand1 bits, OP, operand2 bits, END
    assert np.array_equal(ex.inputs[l1], tasks.encode_symbol(Symbol.OP))
    assert np.array_equal(ex.inputs[-1], tasks.encode_symbol(Symbol.END))
    for i, bit in enumerate(ex.operand1):
        assert np.array_equal(ex.inputs[i], tasks.encode_bit(bit))
    for i, bit in enumerate(ex.operand2):
        assert np.array_equal(ex.inputs[l1 + 1 + i], tasks.encode_bit(bit))
    # target decodes to the exact integer result
    assert np.array_equal(ex.targets[-1], tasks.encode_symbol(Symbol.END))
    bits = [int(row[0]) for row in ex.targets[:-1]]
    a = tasks.from_little_endian(ex.operand1)
    b = tasks.from_little_endian(ex.operand2)
    want = a + b if ex.kind == "add" else a * b
    assert tasks.from_little_endian(bits) == want


def test_make_example_worked_sum():
    ex = tasks.make_example(8, 3, 4, "add")
    assert ex.operand1 == [0, 0, 0, 1]
    assert ex.operand2 == [1, 1, 0, 0]
    assert ex.targets.shape == (6, 3)
    assert [int(r[0]) for r in ex.targets[:-1]] == [1, 1, 0, 1, 0]
    check_example_invariants(ex)


def test_make_example_degenerate_sum():
    ex = tasks.make_example(0, 0, 1, "add")
    assert [int(r[0]) for r in ex.targets[:-1]] == [0, 0]
    check_example_invariants(ex)


def test_make_example_product():
    ex = tasks.make_example(5, 3, 3, "mul")
    assert [int(r[0]) for r in ex.targets[:-1]] == tasks.to_little_endian(15, 6)
    check_example_invariants(ex)


def test_make_example_rejects_overflow_and_bad_kind():
    with pytest.raises(ValueError):
        tasks.make_example(8, 0, 3, "add")
    with pytest.raises(ValueError):
        tasks.make_example(1, 1, 2, "sub")


def test_sample_example_deterministic():
    a = tasks.sample_example(np.random.default_rng(123), 8, "add")
    b = tasks.sample_example(np.random.default_rng(123), 8, "add")
    assert a.operand1 == b.operand1 and a.operand2 == b.operand2
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.targets, b.targets)


def test_sample_example_covers_all_lengths():
    rng = np.random.default_rng(7)
    seen1, seen2 = set(), set()
    for _ in range(10_000):
        ex = tasks.sample_example(rng, 8, "mul")
        seen1.add(len(ex.operand1))
        seen2.add(len(ex.operand2))
        if seen1 == set(range(1, 9)) and seen2 == set(range(1, 9)):
            break
    assert seen1 == set(range(1, 9))
    assert seen2 == set(range(1, 9))


def test_sample_example_invariants_hold():
    rng = np.random.default_rng(8)
    for _ in range(200):
        kind = "add" if rng.integers(2) else "mul"
        check_example_invariants(tasks.sample_example(rng, 8, kind))


def test_sample_example_sequence_length_range():
    # two 1-bit operands give the 4-element minimum input; two 8-bit ones
    # give the 18-element maximum
    rng = np.random.default_rng(9)
    lengths = set()
    for _ in range(3000):
        lengths.add(tasks.sample_example(rng, 8, "add").inputs.shape[0])
    assert min(lengths) == 4
    assert max(lengths) == 18


def test_sample_example_rejects_bad_max_bits():
    with pytest.raises(ValueError):
        tasks.sample_example(np.random.default_rng(0), 0, "add")


def test_dataset_line_round_trip():
    line = tasks.format_dataset_line("mul", 5, 19, 7)
    assert line == "mul 5 19 7"
    ex = tasks.parse_dataset_line(line)
    assert ex.kind == "mul"
    assert tasks.from_little_endian(ex.operand1) == 19
    assert tasks.from_little_endian(ex.operand2) == 7
    assert len(ex.operand1) == 5
    check_example_invariants(ex)


def test_dataset_line_rejects_garbage():
    with pytest.raises(ValueError):
        tasks.parse_dataset_line("add 3 1")
    with pytest.raises(ValueError):
        tasks.parse_dataset_line("pow 3 1 1")
