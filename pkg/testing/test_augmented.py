# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import pytest
import torch

from core.augmented import THRESHOLD_PARAMETERS, AugmentedModel, AugmentedSpec, require_flags
from core.exceptions import ContractError, InvalidArgument
from core.model import STATE_NAMES, DeraInputs, DeraParameters, FlagConfig, equilibrium, rhs


@pytest.mark.parametrize('name,size', [('CASE1_FULL', 23), ('CASE1_REDUCED', 10),
                                       ('CASE2_REDUCED', 14), ('CASE2_CALIBRATION', 19)])
def test_preset_sizes(name, size):
    spec = AugmentedSpec.preset(name)
    assert spec.n_aug == size
    assert spec.names[:len(spec.active_states)] == spec.active_states


def test_spec_rejects_bad_entries():
    case1 = FlagConfig.preset('CASE1')
    with pytest.raises(InvalidArgument):
        AugmentedSpec(case1, ('x1', 'x2'), ())
    with pytest.raises(InvalidArgument):
        AugmentedSpec(case1, ('x1',), ('pfaref',))
    with pytest.raises(InvalidArgument):
        AugmentedSpec(case1, ('x1',), ('T_rv', 'T_rv'))
    with pytest.raises(InvalidArgument):
        AugmentedSpec(case1, ('x1',), ('T_zz',))
    with pytest.raises(InvalidArgument):
        AugmentedSpec(case1, ('x1',), (), measurement_set='vq')


def test_without_and_with_states():
    spec = AugmentedSpec.preset('CASE1_FULL')
    reduced = spec.without('x8', *THRESHOLD_PARAMETERS)
    preset = AugmentedSpec.preset('CASE1_REDUCED')
    assert reduced.active_states == preset.active_states
    assert set(reduced.parameters) == set(preset.parameters)
    assert spec.with_states(('x10', 'x1')).active_states == ('x1', 'x10')
    assert spec.with_measurement_set('VIDIQ').channels == ('V', 'I_d', 'I_q')


def test_vector_field_matches_plant():
    spec = AugmentedSpec.preset('CASE2_REDUCED')
    params = DeraParameters(pfaref=0.3)
    u = DeraInputs(V=0.9, freq=0.998)
    x = equilibrium(DeraInputs(), params, spec.flags) + 0.01
    model = AugmentedModel(spec, params, carried=x.tolist())
    xa = model.pack(x)
    dxa = model.vector_field(xa, u)
    dx = rhs(x, u, params, spec.flags)
    for i, s in enumerate(spec.active_states):
        assert float(dxa[i]) == pytest.approx(float(dx[STATE_NAMES.index(s)]), rel=1e-12, abs=1e-12)
    assert torch.count_nonzero(dxa[len(spec.active_states):]) == 0


def test_parameters_come_from_the_augmented_vector():
    spec = AugmentedSpec.preset('CASE1_REDUCED')
    params = DeraParameters()
    x = equilibrium(DeraInputs(), params, spec.flags)
    model = AugmentedModel(spec, params, carried=x.tolist())
    xa = model.pack(x, params.replace(T_rv=0.5).to_dict())
    states, values = model.unpack(xa)
    assert float(values['T_rv']) == 0.5
    assert values['T_p'] == params.T_p
    assert float(model.full_state(xa)[0]) == pytest.approx(float(x[0]))
    assert model.jacobian(xa, DeraInputs(V=0.9)).shape == (10, 10)
    assert model.output_jacobian(xa, DeraInputs(V=0.9)).shape == (3, 10)


def test_require_flags():
    spec = AugmentedSpec.preset('CASE2_REDUCED')
    require_flags(spec, [(1, 1, 0, 0)])
    with pytest.raises(ContractError):
        require_flags(spec, [(0, 0, 0, 0)])
