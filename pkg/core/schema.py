# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
# '''
# In this file we define the schema of every YAML document read by
# e2e_calibrator.py. It is evaluated by core/config.py with
# PARAMETER_NAMES, STATE_NAMES and CHANNELS in scope, and each top-level
# key is passed to an instance of the cerberus Validator.
# '''

{
    'parameters': {name: {'type': 'number'} for name in PARAMETER_NAMES},

    'scenario': {
        'name': {'type': 'string', 'default': 'scenario'},
        'flags': {'type': 'string', 'allowed': ['CASE1', 'CASE2'], 'default': 'CASE1'},
        'parameters_file': {'type': 'string', 'nullable': True, 'default': None},
        'parameters': {
            'type': 'dict',
            'default': {},
            'keysrules': {'type': 'string', 'allowed': list(PARAMETER_NAMES)},
            'valuesrules': {'type': 'number'},
        },
        'profile': {
            'type': 'dict',
            'default': {},
            'schema': {
                'a': {'type': 'number', 'min': 0.0, 'max': 1.0, 'default': 0.80},
                'b': {'type': 'number', 'min': 0.0, 'default': 60.0},
                'c': {'type': 'number', 'min': 0.0, 'default': 0.90},
                'd': {'type': 'number', 'min': 0.0, 'max': 1.0, 'default': 0.90},
                't_event': {'type': 'number', 'min': 0.0, 'default': 1.0},
                'frequency_ramp': {
                    'type': 'dict',
                    'nullable': True,
                    'default': None,
                    'schema': {
                        'times': {'type': 'list', 'required': True, 'schema': {'type': 'number'}},
                        'values': {'type': 'list', 'required': True, 'schema': {'type': 'number'}},
                    },
                },
            },
        },
        'duration': {'type': 'number', 'min': 0.0, 'default': 3.0},
        'sample_rate': {'type': 'number', 'min': 0.0, 'default': 30.0},
        'substeps': {'type': 'integer', 'min': 1, 'default': 32},
        'references': {
            'type': 'dict',
            'default': {},
            'schema': {
                'V_ref0': {'type': 'number', 'default': 1.0},
                'Q_ref': {'type': 'number', 'default': 0.2},
                'P_ref': {'type': 'number', 'default': 0.5},
                'f_ref': {'type': 'number', 'default': 1.0},
            },
        },
        'pfaref_from_references': {'type': 'boolean', 'default': False},
        'noise': {
            'type': 'dict',
            'default': {},
            'keysrules': {'type': 'string', 'allowed': list(CHANNELS)},
            'valuesrules': {'type': 'number', 'min': 0.0},
        },
        'seed': {'type': 'integer', 'default': 0},
        'sharpness': {'type': 'integer', 'min': 2, 'default': 12},
    },

    'spec': {
        'name': {'type': 'string', 'nullable': True, 'default': None},
        'preset': {'type': 'string', 'nullable': True, 'default': None},
        'flags': {'type': 'string', 'allowed': ['CASE1', 'CASE2'], 'nullable': True, 'default': None},
        'active_states': {'type': 'list', 'nullable': True, 'default': None,
                          'schema': {'type': 'string', 'allowed': list(STATE_NAMES)}},
        'parameters': {'type': 'list', 'nullable': True, 'default': None,
                       'schema': {'type': 'string', 'allowed': list(PARAMETER_NAMES)}},
        'measurement_set': {'type': 'string', 'allowed': ['vpq', 'vidiq', 'vidiqpq'], 'default': 'vpq'},
        'analysis': {
            'type': 'dict',
            'default': {},
            'schema': {
                'max_order': {'type': 'integer', 'min': 1, 'nullable': True},
                'cap_order': {'type': 'integer', 'min': 1},
                'scaling': {'type': 'string', 'allowed': ['block', 'raw']},
                'scheme': {'type': 'string', 'allowed': ['taylor', 'jvp', 'fd']},
                'safety': {'type': 'number', 'min': 0.0},
                'points': {'type': 'integer', 'min': 1, 'nullable': True},
                'jitter': {'type': 'number', 'min': 0.0},
                'seed': {'type': 'integer'},
                'k': {'type': 'integer', 'min': 2},
                'meter_noise': {'type': 'dict', 'keysrules': {'type': 'string', 'allowed': ['V', 'P', 'Q']},
                                'valuesrules': {'type': 'number', 'min': 1e-12}},
            },
        },
        'selection': {
            'type': 'dict',
            'default': {},
            'schema': {
                'enabled': {'type': 'boolean'},
                'weight_threshold': {'type': 'number', 'min': 0.0},
                'pinned': {'type': 'list', 'schema': {'type': 'string'}},
                'pre_exclude': {'type': 'boolean'},
                'state_exclusions': {'type': 'list', 'schema': {'type': 'string', 'allowed': list(STATE_NAMES)}},
            },
        },
    },

    'filter': {
        'type': {'type': 'string', 'allowed': ['ekf', 'ukf'], 'default': 'ekf'},
        'measurement_noise': {
            'type': 'dict',
            'default': {},
            'keysrules': {'type': 'string', 'allowed': list(CHANNELS)},
            'valuesrules': {'type': 'number', 'min': 0.0},
        },
        'state_process_noise': {'type': 'number', 'min': 0.0, 'default': 1e-12},
        'parameter_process_noise': {'type': 'number', 'min': 0.0, 'default': 1e-10},
        'process_noise': {'type': 'dict', 'default': {}, 'valuesrules': {'type': 'number', 'min': 0.0}},
        'state_initial_variance': {'type': 'number', 'min': 0.0, 'default': 1e-8},
        'initial_covariance': {'type': 'dict', 'default': {}, 'valuesrules': {'type': 'number', 'min': 0.0}},
        'initial_parameters': {
            'type': 'dict',
            'default': {},
            'keysrules': {'type': 'string', 'allowed': list(PARAMETER_NAMES)},
            'valuesrules': {'type': 'number'},
        },
        'initial_parameters_file': {'type': 'string', 'nullable': True, 'default': None},
        'parameter_bounds': {
            'type': 'dict',
            'default': {},
            'keysrules': {'type': 'string', 'allowed': list(PARAMETER_NAMES)},
            'valuesrules': {'type': 'list', 'minlength': 2, 'maxlength': 2, 'schema': {'type': 'number'}},
        },
        'ukf_alpha': {'type': 'number', 'default': 0.1},
        'ukf_beta': {'type': 'number', 'default': 2.0},
        'ukf_kappa': {'type': 'number', 'default': 0.0},
        'seed': {'type': 'integer', 'default': 0},
        'eps': {'type': 'number', 'min': 0.0, 'nullable': True, 'default': 1e-6},
        'jacobian': {'type': 'string', 'allowed': ['ad', 'analytic'], 'default': 'ad'},
        'stage_mode': {'type': 'string', 'allowed': ['exact', 'literal'], 'default': 'exact'},
        'substeps': {'type': 'integer', 'min': 1, 'default': 32},
        'cov_tail': {'type': 'integer', 'min': 2, 'default': 30},
        'passes': {'type': 'integer', 'min': 1, 'default': 1},
        'noise_annealing': {'type': 'number', 'min': 1e-12, 'default': 1.0},
        'log_parameters': {'type': 'boolean', 'default': False},
        'parameter_log_std': {'type': 'number', 'min': 1e-12, 'default': 1.0},
    },

    'manifest': {
        'command': {'type': 'string', 'required': True,
                    'allowed': ['simulate', 'observe', 'calibrate', 'compare']},
        'arguments': {'type': 'dict', 'required': True, 'allow_unknown': True},
        'config_paths': {'type': 'dict', 'default': {}, 'valuesrules': {'type': 'string', 'nullable': True}},
        'parameters': {'type': 'dict', 'default': {}, 'allow_unknown': True},
        'seed': {'type': 'integer', 'nullable': True, 'default': None},
        'version': {'type': 'string', 'default': ''},
        'outputs': {'type': 'dict', 'default': {}, 'valuesrules': {'type': 'string'}},
    },
}
