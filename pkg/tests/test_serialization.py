import json

import numpy as np
import pytest

from data_models import PrecisionState, SparsityPattern
from errors import DimensionMismatchError, InvalidDataError
from serialization import (
    dumps,
    file_digest,
    pair_table,
    pattern_from_json,
    pattern_to_json,
    read_json,
    read_matrix_csv,
    read_vector_csv,
    state_from_json,
    state_to_json,
    write_json,
    write_matrix_csv,
)


def test_matrix_csv_keeps_full_precision(tmp_path):
    path = tmp_path / 'm.csv'
    matrix = np.array([[0.1, 1.0 / 3.0], [np.pi, -2.5e-17]])
    write_matrix_csv(str(path), matrix)
    assert np.array_equal(read_matrix_csv(str(path)), matrix)


def test_matrix_csv_with_header(tmp_path):
    path = tmp_path / 'h.csv'
    write_matrix_csv(str(path), np.eye(2), columns=['a', 'b'])
    assert path.read_text().splitlines()[0] == 'a,b'
    assert np.array_equal(read_matrix_csv(str(path), header=True), np.eye(2))


@pytest.mark.parametrize("text", ["1,2\n3,x\n", "1,2\n3,\n", ""])
def test_bad_csv_is_rejected(tmp_path, text):
    path = tmp_path / 'bad.csv'
    path.write_text(text)
    with pytest.raises(InvalidDataError):
        read_matrix_csv(str(path))


def test_vector_csv(tmp_path):
    path = tmp_path / 'v.csv'
    path.write_text("1.5\n2.5\n3.5\n")
    assert list(read_vector_csv(str(path))) == [1.5, 2.5, 3.5]
    path.write_text("1,2\n3,4\n")
    with pytest.raises(InvalidDataError):
        read_vector_csv(str(path))


def test_dumps_is_canonical():
    text = dumps({'b': np.float64(np.nan), 'a': np.arange(3), 'c': {'z': np.bool_(True), 'y': np.int64(4)}})
    assert json.loads(text) == {'a': [0, 1, 2], 'b': None, 'c': {'y': 4, 'z': True}}
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert text.endswith('\n')


def test_json_files(tmp_path):
    path = tmp_path / 'doc.json'
    write_json(str(path), {'x': 1.0})
    assert read_json(str(path)) == {'x': 1.0}
    assert len(file_digest(str(path))) == 64

    path.write_text('[1, 2]')
    with pytest.raises(InvalidDataError):
        read_json(str(path))
    path.write_text('{not json')
    with pytest.raises(InvalidDataError):
        read_json(str(path))


def test_pair_table_is_one_based():
    assert pair_table(3) == [[1, 2], [1, 3], [2, 3]]


def test_pattern_documents_are_one_based():
    pattern = SparsityPattern.from_edges(4, [(0, 3), (1, 2)])
    doc = pattern_to_json(pattern)
    assert doc == {'p': 4, 'edges': [[1, 4], [2, 3]]}
    assert pattern_from_json(doc) == pattern
    assert pattern_from_json({'result': doc, 'manifest': {}}) == pattern


def test_pattern_from_selected_flags():
    doc = {'p': 3, 'selected': [1, 0, 1]}
    assert pattern_from_json(doc).edges() == [(0, 1), (1, 2)]
    with pytest.raises(DimensionMismatchError):
        pattern_from_json({'p': 3, 'selected': [1, 0]})


@pytest.mark.parametrize("doc", [
    {'edges': [[1, 2]]},
    {'p': 3, 'edges': [[1, 1]]},
    {'p': 3, 'edges': [[0, 2]]},
    {'p': 3, 'edges': [[1, 2, 3]]},
    {'p': 3},
])
def test_bad_pattern_documents(doc):
    with pytest.raises(InvalidDataError):
        pattern_from_json(doc)


def test_state_documents():
    state = PrecisionState(p=3, diag=[1.0, 2.0, 3.0], offdiag=[0.1, 0.0, -0.2])
    doc = json.loads(dumps({'result': {'estimate': state_to_json(state)}}))
    back = state_from_json(doc)
    assert np.array_equal(back.dense(), state.dense())
    with pytest.raises(InvalidDataError):
        state_from_json(doc, key='mode')
