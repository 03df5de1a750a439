# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import dataclasses
import math

import pytest
import torch
from scipy import stats

from core.config import ProfileConfig, ScenarioConfig
from core.dataset import MeasurementRecord
from core.exceptions import InvalidArgument
from core.model import DeraInputs, DeraParameters, FlagConfig
from core.scenario import (FrequencyRamp, TripTimer, VoltageProfileSpec, add_noise, build_inputs, replay,
                           simulate_scenario, synthesize, voltage_profile)


def test_default_profile():
    assert voltage_profile(0.5) == 1.0
    assert voltage_profile(1.05) == 0.8
    assert voltage_profile(1.1) == 0.8
    assert voltage_profile(1.999) == 0.8
    assert voltage_profile(2.0) == 1.0


def test_short_sag_then_ramp():
    spec = VoltageProfileSpec(b=6.0)
    assert spec.sag_end == pytest.approx(1.1)
    assert voltage_profile(1.05, spec) == 0.8
    assert voltage_profile(1.1, spec) == pytest.approx(0.8)
    assert voltage_profile(1.55, spec) == pytest.approx(0.8 + 0.1 / 9 * 0.45)
    assert voltage_profile(1.9, spec) == 1.0


def test_profile_validation():
    with pytest.raises(InvalidArgument):
        VoltageProfileSpec(a=0.95, d=0.9)
    with pytest.raises(InvalidArgument):
        VoltageProfileSpec(b=0.0)
    with pytest.raises(InvalidArgument):
        voltage_profile(-0.1)


def test_frequency_ramp():
    ramp = FrequencyRamp.default()
    assert ramp(0.0) == 1.0
    assert ramp(1.8) == pytest.approx(0.99)
    assert ramp(2.1) == pytest.approx(1.0)
    assert ramp(5.0) == 1.0
    with pytest.raises(InvalidArgument):
        FrequencyRamp([1.0, 1.0], [1.0, 0.9])


def test_trip_timer_resets_in_band():
    timer = TripTimer(DeraParameters())
    assert timer.update(1.0, 0.0) == 0.0
    assert timer.update(0.45, 1.0) == 0.0
    assert timer.update(0.45, 1.2) == pytest.approx(0.2)
    assert timer.update(1.0, 1.3) == 0.0
    assert timer.update(0.45, 1.5) == 0.0
    inputs = build_inputs([0.0, 0.1, 0.2], [1.0, 0.4, 0.4], [1.0] * 3, DeraInputs(), DeraParameters())
    assert [u.t_trip for u in inputs] == pytest.approx([0.0, 0.0, 0.1])


@pytest.fixture(scope='module')
def short():
    return ScenarioConfig(name='short', flags='CASE1', duration=2.0, substeps=8, seed=4)


def test_noise_free_records_are_truth(short):
    short = dataclasses.replace(short, noise={c: 0.0 for c in ('V', 'freq', 'P', 'Q', 'I_d', 'I_q')})
    result = synthesize(short)
    assert len(result.records) == 61
    assert result.records == result.truth


def test_records_follow_outputs(short):
    result = simulate_scenario(short)
    for r, x in zip(result.truth, result.states):
        assert r.P == pytest.approx(r.V * float(x[9]))
        assert r.Q == pytest.approx(r.V * float(x[3]))
        assert r.I_d == pytest.approx(float(x[9]))
    assert result.truth[0].V == 1.0
    assert result.truth[45].V == 0.8


def test_seeded_noise_is_reproducible(short):
    first = synthesize(short).records
    second = synthesize(short).records
    assert first == second
    other = add_noise(synthesize(short).truth, short.noise, seed=5)
    assert other != first
    assert all(r.freq == 1.0 for r in first)


def test_noise_keeps_masked_channels(short):
    truth = simulate_scenario(short).truth[:3]
    noisy = add_noise(truth, {'P': 1e-3}, seed=0)
    assert noisy[0].Q == truth[0].Q
    assert noisy[0].P != truth[0].P


def test_replay_reproduces_truth(short):
    result = simulate_scenario(short)
    again = replay(result.records, result.params, result.flags, short.inputs_template(), substeps=8)
    for a, b in zip(again, result.truth):
        assert a.P == pytest.approx(b.P, abs=1e-12)
        assert a.Q == pytest.approx(b.Q, abs=1e-12)


def test_pfaref_from_references():
    cfg = ScenarioConfig(flags='CASE2', pfaref_from_references=True, references={'Q_ref': 0.2, 'P_ref': 0.5})
    assert cfg.load_parameters().pfaref == pytest.approx(math.atan(0.4))
    assert cfg.flag_config == FlagConfig.preset('CASE2')


def test_trajectory_view(short):
    trajectory = simulate_scenario(short).trajectory()
    assert trajectory.states.shape == (61, 10)
    assert isinstance(trajectory.times, torch.Tensor)


def test_noise_is_gaussian_with_configured_std():
    truth = [MeasurementRecord(t=0.01 * i, V=1.0, freq=1.0, P=0.5, Q=0.2, I_d=0.5, I_q=0.2) for i in range(2000)]
    noisy = add_noise(truth, {'P': 2e-3, 'Q': 5e-4}, seed=11)
    for channel, std in (('P', 2e-3), ('Q', 5e-4)):
        residuals = [(n.value(channel) - t.value(channel)) / std for n, t in zip(noisy, truth)]
        assert stats.kstest(residuals, 'norm').pvalue > 1e-4
    assert all(n.V == 1.0 for n in noisy)


def test_flat_profile_stays_at_equilibrium():
    cfg = ScenarioConfig(name='flat', flags='CASE1', duration=1.0, substeps=8, profile=ProfileConfig(a=1.0, d=1.0),
                         noise={c: 0.0 for c in ('V', 'freq', 'P', 'Q', 'I_d', 'I_q')})
    records = synthesize(cfg).records
    for channel in ('V', 'P', 'Q', 'I_d', 'I_q'):
        values = [r.value(channel) for r in records]
        assert max(values) - min(values) < 1e-8
