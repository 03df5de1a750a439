# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Measurement records and their CSV representation.

A file has the header :code:`t,V,freq,P,Q,Id,Iq`; a masked channel is an
empty cell. Floats are written with :code:`repr` so that reading a file
back gives the very same values.
'''

from __future__ import annotations

import csv
import logging
import math
import os
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from torch.utils.data import Dataset as PyTorchDataset

from core.exceptions import DataFault, ParseError
from utils import print_rank

CHANNELS = ('V', 'freq', 'P', 'Q', 'I_d', 'I_q')
COLUMNS = ('t', 'V', 'freq', 'P', 'Q', 'Id', 'Iq')
TRUTH_COLUMNS = ('t',) + tuple(f'x{i}' for i in range(1, 11)) + COLUMNS[1:]
_FIELD_OF_COLUMN = dict(zip(COLUMNS, ('t',) + CHANNELS))


@dataclass(frozen=True)
class MeasurementRecord:
    '''One sample. A channel holding None is masked and ignored by the filters.'''
    t: float
    V: Optional[float] = None
    freq: Optional[float] = None
    P: Optional[float] = None
    Q: Optional[float] = None
    I_d: Optional[float] = None
    I_q: Optional[float] = None

    @property
    def mask(self):
        return tuple(getattr(self, c) is not None for c in CHANNELS)

    def value(self, channel, default=math.nan):
        v = getattr(self, channel)
        return default if v is None else v

    def is_valid(self, channel):
        return getattr(self, channel) is not None


class BaseDataset(ABC, PyTorchDataset):
    '''This is a wrapper class for PyTorch datasets.'''

    @abstractmethod
    def __init__(self, **kwargs):
        super(BaseDataset, self).__init__()

    @abstractmethod
    def __getitem__(self, idx, **kwargs):
        '''Fetches a data sample for a given key'''
        pass

    @abstractmethod
    def __len__(self):
        '''Returns the size of the dataset'''
        pass

    @abstractmethod
    def load_data(self, **kwargs):
        '''Wrapper method to read/instantiate the dataset'''
        pass


class MeasurementDataset(BaseDataset):
    '''Tensor view over a sequence of records.

    Items are dicts with :code:`t`, :code:`values` (masked entries NaN) and
    :code:`mask`, the channels ordered as :code:`CHANNELS`.
    '''

    def __init__(self, records: Sequence[MeasurementRecord] = None, path=None, **kwargs):
        super().__init__()
        self.records = list(records) if records is not None else []
        if path is not None:
            self.load_data(path=path)

    def load_data(self, path=None, **kwargs):
        self.records = read_measurements(path)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx, **kwargs):
        r = self.records[idx]
        return {
            't': torch.tensor(r.t, dtype=torch.float64),
            'values': torch.tensor([r.value(c) for c in CHANNELS], dtype=torch.float64),
            'mask': torch.tensor(r.mask),
        }

    @property
    def times(self):
        return torch.tensor([r.t for r in self.records], dtype=torch.float64)

    def channel(self, name):
        return torch.tensor([r.value(name) for r in self.records], dtype=torch.float64)


def _format(v):
    return '' if v is None else repr(float(v))


def records_to_frame(records: Sequence[MeasurementRecord]) -> pd.DataFrame:
    rows = [[_format(getattr(r, _FIELD_OF_COLUMN[c])) for c in COLUMNS] for r in records]
    return pd.DataFrame(rows, columns=list(COLUMNS))


def write_measurements(path, records: Sequence[MeasurementRecord]):
    '''Write records as CSV; raises DataFault when timestamps are not strictly increasing.'''
    check_monotone(records)
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    records_to_frame(records).to_csv(path, index=False, encoding='utf-8')
    print_rank(f'Wrote {len(records)} records to {path}', loglevel=logging.DEBUG)


def _parse_cell(text, line, column, path, allow_empty=True):
    text = text.strip()
    if text == '':
        if allow_empty:
            return None
        raise ParseError(line, column, 'empty cell', path)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, column, f'not a number: {text!r}', path)
    if not math.isfinite(value):
        raise ParseError(line, column, f'non-finite value {text!r}', path)
    return value


def _malformed_line(path, message):
    '''1-based file line of the row pandas rejected, found again with the csv module
    when the parser message carries no line number.'''
    match = re.search(r'line (\d+)', message)
    if match:
        return int(match.group(1))
    with open(path, newline='', encoding='utf-8') as f:
        rows = csv.reader(f)
        header = next(rows, None)
        for row in rows:
            if header is not None and len(row) > len(header):
                return rows.line_num
    return None


def read_measurements(path) -> List[MeasurementRecord]:
    '''Parse a measurement CSV.

    Raises:
        FileNotFoundError: missing file.
        ParseError: wrong header, malformed cell (with its line number) or
            timestamps that do not strictly increase.
    '''
    if not os.path.exists(path):
        raise FileNotFoundError(f'measurement file not found: {path}')
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding='utf-8')
    except pd.errors.ParserError as e:
        raise ParseError(_malformed_line(path, str(e)), None, f'malformed CSV: {e}', path)
    except pd.errors.EmptyDataError:
        raise ParseError(1, None, 'missing header', path)
    if tuple(frame.columns) != COLUMNS:
        raise ParseError(1, None, f'expected header {",".join(COLUMNS)}, got {",".join(frame.columns)}', path)

    records = []
    for i, row in enumerate(frame.itertuples(index=False)):
        line = i + 2
        values = {}
        for column, text in zip(COLUMNS, row):
            values[_FIELD_OF_COLUMN[column]] = _parse_cell(text, line, column, path, allow_empty=column != 't')
        records.append(MeasurementRecord(**values))
    check_monotone(records, path)
    print_rank(f'Read {len(records)} records from {path}', loglevel=logging.DEBUG)
    return records


def check_monotone(records: Sequence[MeasurementRecord], path=None):
    for i in range(1, len(records)):
        if not records[i].t > records[i - 1].t:
            if path is not None:
                raise ParseError(i + 2, 't', f'timestamp {records[i].t} does not increase', path)
            raise DataFault(f'timestamps must strictly increase, record {i} has t={records[i].t}')


def sample_period(records: Sequence[MeasurementRecord], rtol=1e-6):
    '''Common spacing of the timestamps; raises DataFault for non-uniform sampling.'''
    if len(records) < 2:
        raise DataFault('at least two records are needed')
    t = np.array([r.t for r in records])
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if np.any(np.abs(steps - dt) > rtol * dt):
        raise DataFault(f'records are not uniformly sampled (steps between {steps.min()} and {steps.max()})')
    return dt


def write_truth(path, times, states, records: Sequence[MeasurementRecord]):
    '''Clean trajectory: the ten states followed by the noise-free channels.'''
    frame = pd.DataFrame(np.asarray(states, dtype=float), columns=list(TRUTH_COLUMNS[1:11]))
    frame.insert(0, 't', np.asarray(times, dtype=float))
    channels = records_to_frame(records)
    for column in COLUMNS[1:]:
        frame[column] = channels[column].astype(float).to_numpy()
    frame.to_csv(path, index=False, encoding='utf-8')


def read_truth(path):
    '''Times, states [N, 10] and clean records of a truth CSV.'''
    if not os.path.exists(path):
        raise FileNotFoundError(f'truth file not found: {path}')
    frame = pd.read_csv(path, float_precision='round_trip')
    missing = [c for c in TRUTH_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(1, None, f'missing truth columns {missing}', path)
    states = torch.tensor(frame[list(TRUTH_COLUMNS[1:11])].to_numpy(), dtype=torch.float64)
    records = [MeasurementRecord(t=row.t, V=row.V, freq=row.freq, P=row.P, Q=row.Q, I_d=row.Id, I_q=row.Iq)
               for row in frame.itertuples(index=False)]
    return frame['t'].to_numpy(), states, records
