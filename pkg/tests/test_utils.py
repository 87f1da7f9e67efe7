import os

import pytest

from vcam.utils import atomic_write, flatten_dotted


def test_flatten_dotted():
    """
    Nested tables become dotted keys; top-level keys stay as they are.
    """
    nested = {'T': 600, 'estimation': {'K_grid': [3, 4], 'order': 3}, 'penalty': {}}
    assert flatten_dotted(nested) == {'T': 600, 'estimation.K_grid': [3, 4], 'estimation.order': 3}


def test_atomic_write_replaces_file(tmp_path):
    path = tmp_path / 'report.csv'
    path.write_text('old')
    atomic_write(path, 'a,b\n1,2\n')
    assert path.read_text() == 'a,b\n1,2\n'
    assert os.listdir(tmp_path) == ['report.csv']


def test_atomic_write_leaves_no_temp_file_on_error(tmp_path):
    """
    A failed write removes its temp file and leaves the target untouched.
    """
    path = tmp_path / 'report.csv'
    path.write_text('old')
    with pytest.raises(TypeError):
        atomic_write(path, None)
    assert path.read_text() == 'old'
    assert os.listdir(tmp_path) == ['report.csv']
