# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import math
import os

import pytest
import torch

from core.dataset import (COLUMNS, MeasurementDataset, MeasurementRecord, read_measurements, read_truth,
                          sample_period, write_measurements, write_truth)
from core.exceptions import DataFault, ParseError

RECORDS = [
    MeasurementRecord(t=0.0, V=1.0, freq=1.0, P=0.5, Q=0.2, I_d=0.5, I_q=0.2),
    MeasurementRecord(t=1 / 30, V=0.8, freq=1.0, P=0.41234567890123, Q=None, I_d=0.51, I_q=None),
    MeasurementRecord(t=2 / 30, V=0.8, freq=0.999, P=0.4, Q=0.3, I_d=0.5, I_q=0.375),
]


def write_text(tmp_path, text):
    path = os.path.join(tmp_path, 'data.csv')
    with open(path, 'w') as f:
        f.write(text)
    return path


def test_written_records_read_back(tmp_path):
    path = os.path.join(tmp_path, 'nested', 'measurements.csv')
    write_measurements(path, RECORDS)
    with open(path) as f:
        assert f.readline().strip() == ','.join(COLUMNS)
    assert read_measurements(path) == RECORDS


def test_masked_cells_are_empty(tmp_path):
    path = os.path.join(tmp_path, 'measurements.csv')
    write_measurements(path, RECORDS)
    with open(path) as f:
        lines = f.read().splitlines()
    assert lines[2].split(',')[4] == ''
    record = read_measurements(path)[1]
    assert not record.is_valid('Q')
    assert math.isnan(record.value('Q'))
    assert record.mask == (True, True, True, False, True, False)


def test_empty_file(tmp_path):
    with pytest.raises(ParseError) as info:
        read_measurements(write_text(tmp_path, ''))
    assert info.value.line == 1


def test_header_only_has_no_records(tmp_path):
    assert read_measurements(write_text(tmp_path, ','.join(COLUMNS) + '\n')) == []


def test_bad_cell_reports_line(tmp_path):
    text = ','.join(COLUMNS) + '\n0.0,1,1,0.5,0.2,0.5,0.2\n0.1,1,1,abc,0.2,0.5,0.2\n'
    with pytest.raises(ParseError) as info:
        read_measurements(write_text(tmp_path, text))
    assert info.value.line == 3
    assert info.value.column == 'P'


def test_extra_fields_report_line(tmp_path):
    text = ','.join(COLUMNS) + '\n0.0,1,1,0.5,0.2,0.5,0.2\n0.1,1,1,0.5,0.2,0.5,0.2,7,8\n'
    with pytest.raises(ParseError) as info:
        read_measurements(write_text(tmp_path, text))
    assert info.value.line == 3


def test_non_finite_cell(tmp_path):
    text = ','.join(COLUMNS) + '\n0.0,1,1,inf,0.2,0.5,0.2\n'
    with pytest.raises(ParseError):
        read_measurements(write_text(tmp_path, text))


def test_wrong_header(tmp_path):
    with pytest.raises(ParseError):
        read_measurements(write_text(tmp_path, 't,V,P\n0,1,0.5\n'))


def test_timestamps_must_increase(tmp_path):
    text = ','.join(COLUMNS) + '\n0.1,1,1,0.5,0.2,0.5,0.2\n0.1,1,1,0.5,0.2,0.5,0.2\n'
    with pytest.raises(ParseError) as info:
        read_measurements(write_text(tmp_path, text))
    assert info.value.line == 3
    with pytest.raises(DataFault):
        write_measurements(os.path.join(tmp_path, 'out.csv'), [RECORDS[1], RECORDS[0]])


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_measurements(os.path.join(tmp_path, 'absent.csv'))


def test_sample_period():
    assert sample_period(RECORDS) == pytest.approx(1 / 30)
    with pytest.raises(DataFault):
        sample_period(RECORDS[:1])
    with pytest.raises(DataFault):
        sample_period(RECORDS[:2] + [MeasurementRecord(t=0.5)])


def test_dataset_items():
    dataset = MeasurementDataset(RECORDS)
    assert len(dataset) == 3
    item = dataset[1]
    assert item['mask'].tolist() == [True, True, True, False, True, False]
    assert torch.isnan(item['values'][3])
    assert dataset.channel('V').tolist() == [1.0, 0.8, 0.8]


def test_truth_file(tmp_path):
    path = os.path.join(tmp_path, 'truth.csv')
    states = torch.arange(30, dtype=torch.float64).reshape(3, 10)
    clean = [MeasurementRecord(t=r.t, V=r.V, freq=r.freq, P=0.5, Q=0.2, I_d=0.5, I_q=0.2) for r in RECORDS]
    write_truth(path, [r.t for r in RECORDS], states, clean)
    times, read_states, records = read_truth(path)
    assert torch.equal(read_states, states)
    assert records == clean
    assert times.tolist() == [r.t for r in RECORDS]
