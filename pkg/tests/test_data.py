import io

import numpy as np
import pytest

from cesrisk.data import Dataset, describe, load_dataset, read_kv, save_dataset
from cesrisk.errors import ConfigError, DataError

from conftest import tiny_dataset

CSV = """year,water,nitrogen,yield
1970,12.0,0,1500.5
1970,18.5,40,2100
1971,24.0,80,2900.25
1971,30.0,325,3200
"""


def test_load_from_stream_shifts_nitrogen():
    d = load_dataset(io.StringIO(CSV))
    assert d.n == 4
    np.testing.assert_array_equal(d.raw_nitrogen, [0, 40, 80, 325])
    np.testing.assert_array_equal(d.nitrogen, [1, 41, 81, 326])
    assert d.base_year == 1970
    assert d.dummy_years == (1971,)
    np.testing.assert_array_equal(d.dummies[:, 0], [0, 0, 1, 1])
    assert d.inputs.shape == (4, 2)


def test_column_remapping():
    text = "yr,w,n,y\n1970,1,2,3\n1971,2,3,4\n"
    d = load_dataset(io.StringIO(text), columns={"year": "yr", "water": "w", "nitrogen": "n", "yield": "y"})
    np.testing.assert_array_equal(d.yield_, [3, 4])


@pytest.mark.parametrize(
    "body,row,column",
    [
        ("1970,abc,0,10\n", 2, "water"),
        ("1970,5,0,10\n1970,0,0,10\n", 3, "water"),
        ("1970,5,-1,10\n", 2, "nitrogen"),
        ("1970,5,1,-3\n", 2, "yield"),
        ("1970,5,1\n", 2, "yield"),
        ("1970.5,5,1,2\n", 2, "year"),
        ("1970,nan,1,2\n", 2, "water"),
    ],
)
def test_bad_values_report_row_and_column(body, row, column):
    with pytest.raises(DataError) as info:
        load_dataset(io.StringIO("year,water,nitrogen,yield\n" + body))
    assert info.value.row == row
    assert info.value.column == column


def test_missing_column_and_empty_file():
    with pytest.raises(DataError, match="missing column 'yield'"):
        load_dataset(io.StringIO("year,water,nitrogen\n1970,1,2\n"))
    with pytest.raises(DataError, match="empty file"):
        load_dataset(io.StringIO(""))


def test_blank_lines_skipped():
    d = load_dataset(io.StringIO("year,water,nitrogen,yield\n\n1970,1,0,2\n,,,\n"))
    assert d.n == 1


def test_round_trip_is_exact(tmp_path):
    d = tiny_dataset(12, seed=5)
    d = Dataset(d.year, d.water, d.nitrogen, d.yield_, site="Yuma", crop="wheat")
    p = save_dataset(d, tmp_path / "d.csv")
    back = load_dataset(p)
    assert back == d
    assert back.site == "Yuma" and back.crop == "wheat"
    assert (tmp_path / "d.csv.meta").exists()


def test_meta_sidecar_base_year(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text(CSV)
    (tmp_path / "x.csv.meta").write_text("site = Colby\ncrop = corn\nbase_year = 1971\n")
    d = load_dataset(p)
    assert (d.site, d.crop, d.base_year) == ("Colby", "corn", 1971)
    assert d.dummy_years == (1970,)


def test_dataset_is_immutable():
    d = tiny_dataset()
    with pytest.raises(ValueError):
        d.water[0] = 3.0
    with pytest.raises(AttributeError):
        d.site = "x"


def test_dataset_validation():
    with pytest.raises(DataError, match="length mismatch"):
        Dataset([1970, 1970], [1.0], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(DataError):
        Dataset.from_raw([1970], [1.0], [-0.5], [1.0])


def test_describe_uses_raw_nitrogen():
    d = load_dataset(io.StringIO(CSV))
    s = {v.name: v for v in describe(d)}
    assert s["nitrogen"].mean == pytest.approx(np.mean([0, 40, 80, 325]))
    assert s["nitrogen"].min == 0.0
    assert s["yield"].sd == pytest.approx(np.std([1500.5, 2100, 2900.25, 3200], ddof=1))
    assert s["water"].n == 4


def test_describe_single_row_and_empty():
    one = Dataset.from_raw([1970], [3.0], [0.0], [5.0])
    assert describe(one)[0].sd is None
    empty = Dataset.from_raw([], [], [], [])
    with pytest.raises(DataError, match="no observations"):
        describe(empty)


def test_read_kv():
    kv = read_kv(io.StringIO("# comment\na = 1\nb=two # trailing\n\n"))
    assert kv == {"a": "1", "b": "two"}
    with pytest.raises(ConfigError):
        read_kv(io.StringIO("novalue\n"))
