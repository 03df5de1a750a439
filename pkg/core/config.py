# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Configuration documents: parameter files, scenarios, augmentation specs
and filter settings. Every document is YAML, checked against
:code:`core/schema.py` with cerberus, and may be overridden from the
environment through :code:`DERCAL_<SECTION>__<KEY>` variables.
'''

from __future__ import annotations

import logging
import math
import os
from collections.abc import MutableMapping
from dataclasses import dataclass, field, fields

import yaml
from cerberus import Validator

from core.dataset import CHANNELS
from core.exceptions import ConfigError
from core.model import STATE_NAMES, DeraInputs, DeraParameters, FlagConfig
from utils import print_rank, read_yaml

ENV_PREFIX = 'DERCAL_'
SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'schema.py')


def from_dict(cls, config):
    """
    Helper function to convert a dict to a class
    """
    known = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in config.items() if k in known})


def load_schema(section=None):
    with open(SCHEMA_PATH, 'r') as f:
        schema = eval(f.read(), {
            'PARAMETER_NAMES': DeraParameters.names(),
            'STATE_NAMES': STATE_NAMES,
            'CHANNELS': CHANNELS,
        })
    return schema if section is None else schema[section]


def apply_env_overrides(document, section, environ=None):
    '''Overlay :code:`DERCAL_<SECTION>__<KEY>[__<SUBKEY>]` variables onto a document.

    Keys are matched case-insensitively; values are parsed as YAML so that
    numbers and booleans keep their type.
    '''
    environ = os.environ if environ is None else environ
    prefix = f'{ENV_PREFIX}{section.upper()}__'
    schema = load_schema(section)
    document = dict(document)
    for name, raw in sorted(environ.items()):
        if not name.startswith(prefix):
            continue
        path = name[len(prefix):].split('__')
        target, rules = document, schema
        for depth, token in enumerate(path):
            key = _match_key(token, target, rules)
            if depth == len(path) - 1:
                target[key] = yaml.safe_load(raw)
            else:
                child = target.get(key)
                target[key] = dict(child) if isinstance(child, dict) else {}
                target = target[key]
                rules = (rules or {}).get(key, {}).get('schema', {})
        print_rank(f'Environment override {name}={raw}', loglevel=logging.DEBUG)
    return document


def _match_key(token, document, rules):
    for key in list(document) + list(rules or {}):
        if key.lower() == token.lower():
            return key
    return token


def validate_document(config, section, source=None):
    '''Validate and normalize a document, logging the keys that received defaults.

    Raises:
        ConfigError: carrying the validator errors.
    '''
    schema = load_schema(section)
    v = Validator(schema)
    v.allow_unknown = False
    if not v.validate(config or {}):
        raise ConfigError(v.errors, source)
    normalized = v.normalized(config or {})
    diff = set(normalized) - set(config or {})
    if diff:
        print_rank(f'Assigning default values for: {sorted(diff)} in [{section}]', loglevel=logging.DEBUG)
    return normalized


def load_document(path, section, environ=None):
    if not os.path.exists(path):
        raise FileNotFoundError(f'configuration file not found: {path}')
    try:
        document = read_yaml(path)
    except yaml.YAMLError as e:
        raise ConfigError({'yaml': [str(e)]}, path)
    if not isinstance(document, dict):
        raise ConfigError({'document': ['expected a mapping']}, path)
    document = apply_env_overrides(document, section, environ)
    return validate_document(document, section, path)


def _resolve(path, source):
    if path is None or os.path.isabs(path) or source is None:
        return path
    return os.path.join(os.path.dirname(os.path.abspath(source)), path)


class Config(MutableMapping):
    """Base class for configuration classes."""
    def get(self, k: str, default=None):
        result = getattr(self, k, default)
        if result is None:
            return default
        return result

    def lookup(self, s: str, default=None):
        toks = s.split('.')
        child = getattr(self, toks[0], default)
        if len(toks) == 1:
            return child if child is not None else default
        elif isinstance(child, Config):
            return child.lookup('.'.join(toks[1:]), default)
        elif isinstance(child, dict):
            value = child
            for tok in toks[1:]:
                if not isinstance(value, dict) or tok not in value:
                    return default
                value = value[tok]
            return value
        else:
            return default

    def __getitem__(self, k):
        return getattr(self, k)

    def __setitem__(self, k, v):
        setattr(self, k, v)

    def __delitem__(self, k):
        delattr(self, k)

    def __iter__(self):
        return iter(self.__dict__)

    def __len__(self):
        return len(self.__dict__)

    def __contains__(self, k):
        return getattr(self, k, None) is not None

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_dict() if isinstance(value, Config) else value
        return out


def load_parameters(path, environ=None) -> DeraParameters:
    '''Read a flat parameter file; absent symbols keep their guideline defaults.'''
    document = load_document(path, 'parameters', environ)
    print_rank(f'Loaded {len(document)} parameter values from {path}')
    return DeraParameters.from_dict(document)


@dataclass
class FrequencyRampConfig(Config):
    """Piecewise-linear frequency excursion.

    Attributes:
        times (list): knot times (s), strictly increasing.

        values (list): frequency at each knot (pu); held constant outside the knots.
    """
    times: list = field(default_factory=lambda: [1.5, 1.8, 2.4, 2.7])
    values: list = field(default_factory=lambda: [1.0, 0.99, 1.01, 1.0])

    @staticmethod
    def from_dict(config) -> FrequencyRampConfig:
        return from_dict(FrequencyRampConfig, config)


@dataclass
class ProfileConfig(Config):
    """Voltage sag and recovery profile, plus the optional frequency ramp.

    Attributes:
        a (float): sag voltage (pu).

        b (float): sag length in cycles of 60 Hz.

        c (float): end of the ramp, measured from the sag onset (s).

        d (float): ramp start voltage (pu).

        t_event (float): sag onset (s).

        frequency_ramp (FrequencyRampConfig): None keeps the frequency at 1 pu.
    """
    a: float = 0.80
    b: float = 60.0
    c: float = 0.90
    d: float = 0.90
    t_event: float = 1.0
    frequency_ramp: FrequencyRampConfig = None

    @staticmethod
    def from_dict(config) -> ProfileConfig:
        result = ProfileConfig()
        for k in config:
            if k == 'frequency_ramp':
                result.frequency_ramp = None if config[k] is None else FrequencyRampConfig.from_dict(config[k])
            else:
                setattr(result, k, config[k])
        return result


DEFAULT_NOISE = {'V': 1e-4, 'freq': 0.0, 'P': 1e-4, 'Q': 1e-4, 'I_d': 1e-4, 'I_q': 1e-4}


@dataclass
class ScenarioConfig(Config):
    """Truth simulation and measurement synthesis settings.

    Attributes:
        name (str): label used in file names and logs.

        flags (str): flag preset, CASE1 or CASE2.

        parameters_file (str): parameter file, relative to the scenario file.

        parameters (dict): inline overrides applied on top of :code:`parameters_file`.

        profile (ProfileConfig): voltage and frequency excitation.

        duration (float): simulated time (s); duration * sample_rate must be an integer.

        sample_rate (float): measurement rate (Hz).

        substeps (int): RK4 steps per sampling interval.

        references (dict): V_ref0, Q_ref, P_ref and f_ref (pu).

        pfaref_from_references (bool): set pfaref = atan(Q_ref / P_ref).

        noise (dict): Gaussian noise std per channel (pu).

        seed (int): seed of the noise generator.

        sharpness (int): smoothing sharpness k.
    """
    name: str = 'scenario'
    flags: str = 'CASE1'
    parameters_file: str = None
    parameters: dict = field(default_factory=dict)
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    duration: float = 3.0
    sample_rate: float = 30.0
    substeps: int = 32
    references: dict = field(default_factory=dict)
    pfaref_from_references: bool = False
    noise: dict = field(default_factory=dict)
    seed: int = 0
    sharpness: int = 12
    source: str = None

    def __post_init__(self):
        self.noise = {**DEFAULT_NOISE, **(self.noise or {})}
        self.references = {'V_ref0': 1.0, 'Q_ref': 0.2, 'P_ref': 0.5, 'f_ref': 1.0, **(self.references or {})}
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ConfigError({'duration': ['duration and sample_rate must be positive']}, self.source)
        if abs(self.samples - self.duration * self.sample_rate) > 1e-9:
            raise ConfigError({'duration': ['duration * sample_rate must be an integer']}, self.source)

    @property
    def samples(self):
        return int(round(self.duration * self.sample_rate))

    @property
    def dt(self):
        return 1.0 / self.sample_rate

    @property
    def flag_config(self) -> FlagConfig:
        return FlagConfig.preset(self.flags)

    def load_parameters(self) -> DeraParameters:
        path = _resolve(self.parameters_file, self.source)
        params = load_parameters(path) if path else DeraParameters()
        if self.parameters:
            params = params.replace(**self.parameters)
        if self.pfaref_from_references:
            params = params.replace(pfaref=math.atan2(self.references['Q_ref'], self.references['P_ref']))
        return params

    def inputs_template(self) -> DeraInputs:
        return DeraInputs(dt=self.dt, **self.references)

    @staticmethod
    def from_dict(config, source=None) -> ScenarioConfig:
        config = validate_document(config, 'scenario', source)
        result = ScenarioConfig(
            profile=ProfileConfig.from_dict(config.get('profile') or {}),
            source=source,
            **{k: v for k, v in config.items() if k != 'profile'},
        )
        return result

    @staticmethod
    def from_file(path, environ=None) -> ScenarioConfig:
        document = load_document(path, 'scenario', environ)
        return ScenarioConfig.from_dict(document, source=path)


@dataclass
class AnalysisConfig(Config):
    """Observability analysis knobs, see :code:`core.observability.AnalysisSettings`."""
    max_order: int = None
    cap_order: int = 8
    scaling: str = 'block'
    scheme: str = 'taylor'
    safety: float = 1e3
    points: int = 12
    jitter: float = 1e-2
    seed: int = 0
    k: int = 12
    meter_noise: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(config) -> AnalysisConfig:
        return from_dict(AnalysisConfig, config)


@dataclass
class SelectionConfig(Config):
    """Estimable-set selection.

    Attributes:
        enabled (bool): run the removal loop when the spec is rank-deficient.

        weight_threshold (float): minimum weight of a removed parameter.

        pinned (list): parameters never removed.

        pre_exclude (bool): drop saturation, deadband and threshold parameters up front.

        state_exclusions (list): states dropped up front.
    """
    enabled: bool = True
    weight_threshold: float = 0.0
    pinned: list = field(default_factory=list)
    pre_exclude: bool = True
    state_exclusions: list = field(default_factory=lambda: ['x8'])

    @staticmethod
    def from_dict(config) -> SelectionConfig:
        return from_dict(SelectionConfig, config)


@dataclass
class SpecConfig(Config):
    """Augmented-state specification document.

    Either :code:`preset` names one of the built-in augmentations, or
    :code:`flags`, :code:`active_states` and :code:`parameters` list the
    entries explicitly. Explicit lists override the preset's.
    """
    name: str = None
    preset: str = None
    flags: str = None
    active_states: list = None
    parameters: list = None
    measurement_set: str = 'vpq'
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    source: str = None

    def to_spec(self, measurement_set=None):
        from core.augmented import AugmentedSpec

        measurement_set = measurement_set or self.measurement_set
        if self.preset:
            spec = AugmentedSpec.preset(self.preset, measurement_set)
            flags = FlagConfig.preset(self.flags) if self.flags else spec.flags
            states = self.active_states if self.active_states is not None else spec.active_states
            parameters = self.parameters if self.parameters is not None else spec.parameters
            name = self.name or spec.name
        else:
            if self.flags is None or self.active_states is None or self.parameters is None:
                raise ConfigError({'spec': ['give a preset or all of flags, active_states and parameters']},
                                  self.source)
            flags = FlagConfig.preset(self.flags)
            states, parameters, name = self.active_states, self.parameters, self.name or 'custom'
        return AugmentedSpec(flags, tuple(states), tuple(parameters), measurement_set, name)

    def analysis_settings(self):
        from core.observability import AnalysisSettings

        return AnalysisSettings(**self.analysis.to_dict())

    @staticmethod
    def from_dict(config, source=None) -> SpecConfig:
        config = validate_document(config, 'spec', source)
        result = SpecConfig(source=source)
        for k in config:
            if k == 'analysis':
                result.analysis = AnalysisConfig.from_dict(config[k])
            elif k == 'selection':
                result.selection = SelectionConfig.from_dict(config[k])
            else:
                setattr(result, k, config[k])
        return result

    @staticmethod
    def from_file(path, environ=None) -> SpecConfig:
        return SpecConfig.from_dict(load_document(path, 'spec', environ), source=path)


DEFAULT_MEASUREMENT_NOISE = 1e-8


@dataclass
class FilterConfig(Config):
    """Settings of the EKF/UKF calibration.

    Variances are in pu². Entries not listed in :code:`process_noise` or
    :code:`initial_covariance` take the state or parameter default; the
    initial parameter variance defaults to max(|theta_0|, 0.1)².

    Attributes:
        type (str): :code:`ekf` or :code:`ukf`.

        measurement_noise (dict): R diagonal per channel, default 1e-8.

        state_process_noise (float): W for dynamic states.

        parameter_process_noise (float): W for parameters.

        process_noise (dict): W overrides by entry name.

        state_initial_variance (float): P0 for dynamic states.

        initial_covariance (dict): P0 overrides by entry name.

        initial_parameters (dict): theta_0; missing entries start from the guideline values.

        initial_parameters_file (str): parameter file with theta_0, relative to this document.

        parameter_bounds (dict): [min, max] per parameter.

        ukf_alpha, ukf_beta, ukf_kappa (float): sigma-point constants.

        seed (int): copied to the run manifest only. Neither filter draws random
            numbers, so two runs on the same data agree whatever its value.

        eps (float): floor on smooth-operator slopes in Jacobians, None for exact slopes.

        jacobian (str): :code:`ad` or :code:`analytic` (EKF only).

        stage_mode (str): :code:`exact` or :code:`literal` RK4 stage Jacobians.

        substeps (int): RK4 steps between measurements.

        cov_tail (int): samples in the tail used for CoV.

        passes (int): times the records are filtered, each pass starting from
            the parameters the previous one ended with.

        noise_annealing (float): R of pass j out of J is scaled by
            noise_annealing ** (J - 1 - j), so the last pass uses R itself.

        log_parameters (bool): filter time constants and gains as logarithms.
            Their process noise and initial covariance are then in log units.

        parameter_log_std (float): initial std of a log-filtered parameter.
    """
    type: str = 'ekf'
    measurement_noise: dict = field(default_factory=dict)
    state_process_noise: float = 1e-12
    parameter_process_noise: float = 1e-10
    process_noise: dict = field(default_factory=dict)
    state_initial_variance: float = 1e-8
    initial_covariance: dict = field(default_factory=dict)
    initial_parameters: dict = field(default_factory=dict)
    initial_parameters_file: str = None
    parameter_bounds: dict = field(default_factory=dict)
    ukf_alpha: float = 0.1
    ukf_beta: float = 2.0
    ukf_kappa: float = 0.0
    seed: int = 0
    eps: float = 1e-6
    jacobian: str = 'ad'
    stage_mode: str = 'exact'
    substeps: int = 32
    cov_tail: int = 30
    passes: int = 1
    noise_annealing: float = 1.0
    log_parameters: bool = False
    parameter_log_std: float = 1.0
    source: str = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        errors = {}
        variances = [('state_process_noise', self.state_process_noise),
                     ('parameter_process_noise', self.parameter_process_noise),
                     ('state_initial_variance', self.state_initial_variance)]
        variances += [(f'measurement_noise.{k}', v) for k, v in self.measurement_noise.items()]
        variances += [(f'process_noise.{k}', v) for k, v in self.process_noise.items()]
        variances += [(f'initial_covariance.{k}', v) for k, v in self.initial_covariance.items()]
        for key, value in variances:
            if not value > 0:
                errors[key] = [f'variance must be positive, got {value}']
        if not 0.0 < self.ukf_alpha <= 1.0:
            errors['ukf_alpha'] = ['must lie in (0, 1]']
        if self.ukf_beta < 0:
            errors['ukf_beta'] = ['must be non-negative']
        for name, bounds in self.parameter_bounds.items():
            if len(bounds) != 2 or not bounds[0] < bounds[1]:
                errors[f'parameter_bounds.{name}'] = [f'expected [min, max] with min < max, got {bounds}']
        if self.eps is not None and self.eps < 0:
            errors['eps'] = ['must be non-negative']
        if self.passes < 1:
            errors['passes'] = ['must be at least 1']
        if not self.noise_annealing > 0:
            errors['noise_annealing'] = ['must be positive']
        if not self.parameter_log_std > 0:
            errors['parameter_log_std'] = ['must be positive']
        if errors:
            raise ConfigError(errors, self.source)

    def channel_variance(self, channel):
        return float(self.measurement_noise.get(channel, DEFAULT_MEASUREMENT_NOISE))

    def load_initial_parameters(self, base: DeraParameters = None) -> DeraParameters:
        '''theta_0 on top of :code:`base`: entries of the initial file, then the inline map.'''
        path = _resolve(self.initial_parameters_file, self.source)
        params = base or DeraParameters()
        if path:
            params = params.replace(**load_document(path, 'parameters'))
        if self.initial_parameters:
            params = params.replace(**self.initial_parameters)
        return params

    @staticmethod
    def from_dict(config, source=None) -> FilterConfig:
        config = validate_document(config, 'filter', source)
        return FilterConfig(source=source, **config)

    @staticmethod
    def from_file(path, environ=None) -> FilterConfig:
        return FilterConfig.from_dict(load_document(path, 'filter', environ), source=path)
