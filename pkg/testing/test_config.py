# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import os

import pytest
import yaml

from core.config import (FilterConfig, ScenarioConfig, SpecConfig, apply_env_overrides, load_document,
                         load_parameters, validate_document)
from core.exceptions import ConfigError, InvalidArgument
from core.model import DeraParameters


def write_doc(tmp_path, name, document):
    path = os.path.join(tmp_path, name)
    with open(path, 'w') as f:
        yaml.safe_dump(document, f)
    return path


def test_shipped_scenarios_load(config_path):
    case1 = ScenarioConfig.from_file(config_path('scenarios', 'case1_sag.yaml'))
    assert case1.samples == 90
    assert case1.flag_config.as_tuple() == (0, 0, 0, 0)
    assert case1.profile.frequency_ramp is None
    case2 = ScenarioConfig.from_file(config_path('scenarios', 'case2_selfcal.yaml'))
    assert case2.profile.b == 6.0
    assert case2.profile.frequency_ramp.values == [1.0, 0.985, 1.0, 1.015, 1.0, 0.985, 1.0]
    assert case2.references['P_ref'] == 0.7
    params = case2.load_parameters()
    assert params.T_rv == 0.21
    assert params.k_ig == 9.97


def test_guideline_file_matches_defaults(config_path):
    assert load_parameters(config_path('parameters', 'nerc_guideline.yaml')) == DeraParameters()


def test_environment_override(tmp_path):
    path = write_doc(tmp_path, 'scenario.yaml', {'name': 'env', 'seed': 1, 'profile': {'a': 0.8}})
    environ = {'DERCAL_SCENARIO__SEED': '11', 'DERCAL_SCENARIO__PROFILE__A': '0.7', 'OTHER': 'x'}
    cfg = ScenarioConfig.from_file(path, environ=environ)
    assert cfg.seed == 11
    assert cfg.profile.a == 0.7
    document = apply_env_overrides({'Seed': 1}, 'scenario', {'DERCAL_SCENARIO__seed': '3'})
    assert document == {'Seed': 3}


def test_unknown_key_is_rejected(tmp_path):
    path = write_doc(tmp_path, 'scenario.yaml', {'name': 'x', 'sead': 3})
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_file(path)
    assert 'sead' in info.value.errors
    with pytest.raises(ConfigError):
        validate_document({'T_xx': 1.0}, 'parameters')


def test_duration_must_fill_samples():
    with pytest.raises(ConfigError):
        ScenarioConfig(duration=1.01, sample_rate=30.0)


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_document(os.path.join(tmp_path, 'absent.yaml'), 'scenario')
    path = os.path.join(tmp_path, 'bad.yaml')
    with open(path, 'w') as f:
        f.write('name: [unclosed\n')
    with pytest.raises(ConfigError):
        load_document(path, 'scenario')


def test_filter_config(config_path):
    cfg = FilterConfig.from_file(config_path('filters', 'ekf.yaml'))
    assert cfg.channel_variance('P') == 1e-8
    assert cfg.channel_variance('I_q') == 1e-8
    params = cfg.load_initial_parameters(base=DeraParameters(X_e=0.3))
    assert params.T_rv == 0.01 and params.D_up == 18.0
    assert params.X_e == 0.3
    assert cfg.jacobian == 'analytic' and cfg.log_parameters
    assert cfg.passes == 4 and cfg.noise_annealing == 100.0
    with pytest.raises(ConfigError):
        FilterConfig(passes=0)
    with pytest.raises(ConfigError):
        FilterConfig(noise_annealing=0.0)
    with pytest.raises(ConfigError):
        FilterConfig(state_process_noise=0.0)
    with pytest.raises(ConfigError):
        FilterConfig(parameter_bounds={'T_rv': [0.5, 0.1]})


def test_spec_config(config_path):
    spec = SpecConfig.from_file(config_path('specs', 'case1_full.yaml')).to_spec()
    assert spec.name == 'CASE1_FULL' and spec.n_aug == 23
    explicit = SpecConfig.from_dict({'flags': 'CASE1', 'active_states': ['x1'], 'parameters': ['T_rv']}).to_spec('vidiq')
    assert explicit.names == ('x1', 'T_rv') and explicit.measurement_set == 'vidiq'
    with pytest.raises(ConfigError):
        SpecConfig.from_dict({'flags': 'CASE1'}).to_spec()
    with pytest.raises(InvalidArgument):
        SpecConfig.from_dict({'flags': 'CASE1', 'active_states': ['x2'], 'parameters': []}).to_spec()


def test_lookup():
    cfg = ScenarioConfig()
    assert cfg.lookup('profile.a') == 0.8
    assert cfg.lookup('references.Q_ref') == 0.2
    assert cfg.lookup('references.missing', 'fallback') == 'fallback'
