from unittest.mock import patch

import pytest

from vcam.artifacts import read_dataset, read_fit
from vcam.cli import Command, CommandConfig, flag_for, main, parse_config
from vcam.errors import ConfigurationError
from vcam.simulation import Example
from vcam.splines import KnotPlacement


def write_config(tmp_path, text):
    path = tmp_path / 'scenario.toml'
    path.write_text(text)
    return str(path)


def test_flags_follow_keys():
    assert flag_for('T') == '--T'
    assert flag_for('estimation.K_grid') == '--estimation.K-grid'
    assert flag_for('log_level') == '--log-level'


def test_unknown_flag_names_the_key():
    with pytest.raises(ConfigurationError) as exc_info:
        parse_config(['mc', '--output', 'report', '--knotz', '3'])
    assert exc_info.value.key == 'knotz'


def test_unknown_flag_exit_code(capsys):
    assert main(['mc', '--output', 'report', '--knotz', '3']) == 2
    assert 'knotz' in capsys.readouterr().err


def test_flag_overrides_config_file(tmp_path):
    """
    Flags win over the file; file keys not given as flags survive.
    """
    path = write_config(tmp_path, 'T = 600\nQ = 5\n\n[estimation]\nK_grid = [3, 4]\n')
    config = parse_config(['mc', '--config', path, '--T', '900', '--output', 'report'])
    assert config.get('T') == 900
    assert config.get('Q') == 5
    assert config.estimation_config().k_grid == (3, 4)


def test_unknown_file_key_names_the_key(tmp_path):
    path = write_config(tmp_path, '[estimation]\nknotz = 3\n')
    with pytest.raises(ConfigurationError) as exc_info:
        parse_config(['mc', '--config', path, '--output', 'report'])
    assert exc_info.value.key == 'estimation.knotz'


def test_invalid_values_rejected():
    with pytest.raises(ConfigurationError) as exc_info:
        parse_config(['mc', '--Q', '0', '--output', 'report'])
    assert exc_info.value.key == 'Q'
    with pytest.raises(ConfigurationError):
        parse_config(['mc', '--penalty.a', '2', '--output', 'report'])
    with pytest.raises(ConfigurationError):
        parse_config(['mc', '--example', 'ex3', '--output', 'report'])


def test_required_keys_and_input_files(tmp_path):
    with pytest.raises(ConfigurationError) as exc_info:
        parse_config(['fit', '--output', 'fit.json'])
    assert exc_info.value.key == 'input'
    with pytest.raises(ConfigurationError) as exc_info:
        parse_config(['fit', '--input', str(tmp_path / 'missing.csv'), '--output', 'fit.json'])
    assert exc_info.value.key == 'input'


def test_defaults_filled():
    """
    Keys left out of both flags and file take the built-in defaults.
    """
    config = CommandConfig(command=Command.MC)
    spec = config.scenario_spec()
    assert (spec.example, spec.T, spec.Q) == (Example.EX1, 600, 100)
    assert spec.segment_length is None
    assert spec.penalty.a == 3.7
    assert spec.estimation.k_grid == (3, 4, 5, 6, 7, 8)


def test_threads_fall_back_to_settings():
    with patch('vcam.cli.settings.THREADS', 3):
        assert CommandConfig(command=Command.MC).threads == 3
        assert CommandConfig(command=Command.MC, values={'threads': 2}).threads == 2


def test_shared_order_and_placement():
    config = parse_config(
        ['mc', '--estimation.order', '4', '--estimation.placement', 'uniform', '--output', 'report']
    )
    estimation = config.estimation_config()
    assert (estimation.order_step1, estimation.order_step2, estimation.order_step3) == (4, 4, 4)
    assert estimation.covariate_placement is KnotPlacement.UNIFORM


def test_step1_smoothing_flag():
    config = parse_config(['mc', '--estimation.step1-smoothing', '0', '--output', 'report'])
    assert config.estimation_config().step1_smoothing == 0.0
    assert CommandConfig(command=Command.MC).estimation_config().step1_smoothing == 1e-4


def test_simulate_then_fit(tmp_path):
    data_path = str(tmp_path / 'data.csv')
    fit_path = str(tmp_path / 'fit.json')
    assert main(['simulate', '--T', '200', '--seed', '3', '--output', data_path]) == 0
    assert read_dataset(data_path).T == 200
    assert (tmp_path / 'data.csv.truth.json').exists()

    assert main(['fit', '--input', data_path, '--output', fit_path, '--I', '25', '--K', '3']) == 0
    fit = read_fit(fit_path)
    assert (fit.segment_length, fit.knot_count) == (25, 3)


def test_fit_by_bic_records_table(tmp_path):
    data_path = str(tmp_path / 'data.csv')
    fit_path = str(tmp_path / 'fit.json')
    assert main(['simulate', '--T', '200', '--seed', '4', '--output', data_path]) == 0
    argv = [
        'fit', '--input', data_path, '--output', fit_path,
        '--estimation.K-grid', '3,4', '--estimation.I-grid', '25,40', '--threads', '2',
    ]
    assert main(argv) == 0
    fit = read_fit(fit_path)
    assert len(fit.diagnostics['bic_table']) == 4
    assert 'bic' in fit.diagnostics


def test_fixed_pair_needs_both(tmp_path, capsys):
    data_path = str(tmp_path / 'data.csv')
    assert main(['simulate', '--T', '200', '--output', data_path]) == 0
    assert main(['fit', '--input', data_path, '--output', str(tmp_path / 'fit.json'), '--I', '25']) == 2
    assert 'K' in capsys.readouterr().err


def test_identify_command(tmp_path):
    data_path = str(tmp_path / 'data.csv')
    fit_path = str(tmp_path / 'fit.json')
    out_path = tmp_path / 'ident.json'
    assert main(['simulate', '--example', 'ex2', '--T', '300', '--seed', '5', '--output', data_path]) == 0
    assert main(['fit', '--input', data_path, '--output', fit_path, '--I', '50', '--K', '3']) == 0
    argv = [
        'identify', '--input', data_path, '--fit', fit_path, '--output', str(out_path),
        '--penalty.lambda-grid', '0.01,0.1', '--penalty.mu-grid', '0.01,0.1',
    ]
    assert main(argv) == 0
    assert out_path.exists()


def test_missing_column_reported(tmp_path, capsys):
    data_path = tmp_path / 'data.csv'
    data_path.write_text('t,y,x2\n1,0.5,0.1\n2,0.4,0.2\n')
    assert main(['fit', '--input', str(data_path), '--output', str(tmp_path / 'fit.json')]) == 1
    err = capsys.readouterr().err
    assert err.startswith('vcam.artifacts: ')
    assert '`x1`' in err


def test_mc_reports_are_reproducible(tmp_path):
    """
    Two runs of the same scenario, with different thread counts, write
    byte-identical CSV reports.
    """
    base = ['mc', '--example', 'ex1', '--T', '200', '--Q', '2', '--I', '25', '--K', '3', '--compare', 'false']
    first, second = str(tmp_path / 'first'), str(tmp_path / 'second')
    assert main(base + ['--output', first, '--threads', '1']) == 0
    assert main(base + ['--output', second, '--threads', '2']) == 0
    assert (tmp_path / 'first.csv').read_bytes() == (tmp_path / 'second.csv').read_bytes()
    assert (tmp_path / 'first.txt').exists()


def test_grids_from_fit(tmp_path):
    data_path = str(tmp_path / 'data.csv')
    fit_path = str(tmp_path / 'fit.json')
    grids = tmp_path / 'grids'
    assert main(['simulate', '--T', '200', '--output', data_path]) == 0
    assert main(['fit', '--input', data_path, '--output', fit_path, '--I', '25', '--K', '3']) == 0
    assert main(['grids', '--fit', fit_path, '--output', str(grids), '--points', '11']) == 0
    names = sorted(p.name for p in grids.iterdir())
    assert names == ['alpha0.csv', 'alpha1.csv', 'alpha2.csv', 'beta1.csv', 'beta2.csv']
    assert len((grids / 'beta1.csv').read_text().splitlines()) == 12


def test_grids_need_fit_or_example1(tmp_path):
    assert main(['grids', '--example', 'ex2', '--output', str(tmp_path / 'grids')]) == 2
