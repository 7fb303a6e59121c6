import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emrbench.ingest import LongRecord
from emrbench.pivot import (
    MatrixState,
    PatientMatrix,
    flatten_matrix,
    group_by_encounter,
    pivot_all,
    pivot_encounter,
)


def rec(time, column, value, encounter="e1", patient="p1"):
    return LongRecord(patient, encounter, time, column, value)


class TestPivotEncounter:
    def test_times_sorted_and_cells_placed(self):
        matrix, collisions = pivot_encounter(
            [rec(2.0, 1, 5.0), rec(0.5, 0, 7.0), rec(2.0, 0, 9.0)], width=3
        )
        assert collisions == 0
        assert matrix.state is MatrixState.RAW
        assert matrix.times.tolist() == [0.5, 2.0]
        assert matrix.values[0, 0] == 7.0
        assert matrix.values[1, 0] == 9.0
        assert matrix.values[1, 1] == 5.0
        assert np.isnan(matrix.values[0, 1])
        assert np.isnan(matrix.values[:, 2]).all()

    def test_collision_last_record_wins(self):
        matrix, collisions = pivot_encounter(
            [rec(1.0, 0, 10.0), rec(1.0, 0, 20.0)], width=1
        )
        assert collisions == 1
        assert matrix.values[0, 0] == 20.0

    def test_mixed_encounters_rejected(self):
        with pytest.raises(ValueError, match="multiple encounters"):
            pivot_encounter(
                [rec(0.0, 0, 1.0, "e1"), rec(0.0, 0, 1.0, "e2")], width=1
            )

    def test_encounter_id_mismatch_rejected(self):
        with pytest.raises(ValueError, match="expected"):
            pivot_encounter([rec(0.0, 0, 1.0, "e1")], width=1, encounter_id="e9")

    def test_empty_records_give_empty_matrix(self):
        matrix, collisions = pivot_encounter([], width=4, encounter_id="e1")
        assert collisions == 0
        assert matrix.n_rows == 0
        assert matrix.width == 4


class TestValidate:
    def test_duplicate_times_rejected(self):
        bad = PatientMatrix(
            "e1", np.array([1.0, 1.0]), np.full((2, 1), 0.0), MatrixState.RAW
        )
        with pytest.raises(ValueError, match="strictly increasing"):
            bad.validate()

    def test_negative_time_rejected(self):
        bad = PatientMatrix(
            "e1", np.array([-0.5]), np.zeros((1, 1)), MatrixState.RAW
        )
        with pytest.raises(ValueError, match="negative"):
            bad.validate()

    def test_imputed_must_be_dense(self):
        bad = PatientMatrix(
            "e1", np.array([0.0]), np.array([[np.nan]]), MatrixState.IMPUTED
        )
        with pytest.raises(ValueError, match="empty cells"):
            bad.validate()

    def test_infinite_cell_rejected(self):
        bad = PatientMatrix(
            "e1", np.array([0.0]), np.array([[np.inf]]), MatrixState.RAW
        )
        with pytest.raises(ValueError, match="non-finite"):
            bad.validate()


records_strategy = st.lists(
    st.tuples(
        st.sampled_from([0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]),
        st.integers(0, 2),
        st.floats(-100, 100, allow_nan=False).map(lambda x: round(x, 3)),
    ),
    min_size=1,
    max_size=30,
)


@given(records_strategy)
@settings(max_examples=100, deadline=None)
def test_flatten_inverts_pivot_up_to_last_wins(triples):
    records = [rec(t, c, v) for t, c, v in triples]
    matrix, collisions = pivot_encounter(records, width=3)
    expected = {}
    for t, c, v in triples:
        expected[(t, c)] = v  # later records overwrite earlier ones
    assert collisions == len(triples) - len(expected)
    assert {(t, c): v for t, c, v in flatten_matrix(matrix)} == expected


def test_flatten_row_major_order():
    matrix, _ = pivot_encounter(
        [rec(1.0, 2, 1.0), rec(1.0, 0, 2.0), rec(0.5, 1, 3.0)], width=3
    )
    assert flatten_matrix(matrix) == [(0.5, 1, 3.0), (1.0, 0, 2.0), (1.0, 2, 1.0)]


class TestPivotAll:
    def test_groups_by_encounter(self):
        records = [
            rec(0.0, 0, 1.0, "e1"),
            rec(0.0, 0, 2.0, "e2"),
            rec(1.0, 0, 3.0, "e1"),
        ]
        matrices, collisions = pivot_all(records, width=1)
        assert set(matrices) == {"e1", "e2"}
        assert collisions == 0
        assert matrices["e1"].n_rows == 2
        assert matrices["e2"].n_rows == 1

    def test_collision_total(self):
        records = [
            rec(0.0, 0, 1.0, "e1"),
            rec(0.0, 0, 2.0, "e1"),
            rec(0.0, 0, 1.0, "e2"),
            rec(0.0, 0, 2.0, "e2"),
        ]
        _, collisions = pivot_all(records, width=1)
        assert collisions == 2

    def test_group_preserves_order(self):
        records = [rec(5.0, 0, 1.0), rec(1.0, 0, 2.0)]
        groups = group_by_encounter(records)
        assert [r.time for r in groups["e1"]] == [5.0, 1.0]


def test_matrix_to_csv(tmp_path, cat3):
    from emrbench.pivot import matrix_to_csv

    matrix, _ = pivot_encounter([rec(0.5, 0, 120.0)], width=3)
    path = tmp_path / "m.csv"
    matrix_to_csv(matrix, cat3, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("time_hours,heart_rate,")
    assert lines[1].split(",")[1] == "120.0"
    assert lines[1].split(",")[2] == ""
