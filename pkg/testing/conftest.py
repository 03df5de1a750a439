# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import os
import sys

import pytest
import torch

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

torch.set_default_dtype(torch.float64)


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long calibration or observability runs')


@pytest.fixture(scope='session')
def root():
    return ROOT


@pytest.fixture(scope='session')
def config_path():
    return lambda *parts: os.path.join(ROOT, 'configs', *parts)
