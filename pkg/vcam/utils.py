import collections.abc
import os
import tempfile
from typing import Any


def flatten_dotted(d: collections.abc.Mapping, prefix: str = '') -> dict[str, Any]:
    """
    Turn nested tables (as produced by a TOML file with dotted keys) into a
    flat `{'section.key': value}` dict.

    e.g.

    flatten_dotted({'T': 600, 'estimation': {'K_grid': [3, 4]}})

    == {'T': 600, 'estimation.K_grid': [3, 4]}
    """
    flat: dict[str, Any] = {}
    for k, v in d.items():
        key = '{}.{}'.format(prefix, k) if prefix else str(k)
        if isinstance(v, collections.abc.Mapping):
            flat.update(flatten_dotted(v, key))
        else:
            flat[key] = v
    return flat


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """
    Write `text` to `path` so readers never observe a truncated file: the
    content goes to a temp file in the same directory which is then renamed
    over the target.
    """
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.vcam-', suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
