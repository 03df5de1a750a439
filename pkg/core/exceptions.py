# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Exceptions raised across DERCAL. The command line entry point maps
each family onto an exit code, see :code:`EXIT_CODES`.
'''


class DercalError(Exception):
    '''Base class for every error raised by this package.'''


class InvalidArgument(DercalError, ValueError):
    pass


class ConfigError(DercalError, ValueError):
    '''Raised when a YAML document does not match its schema.

    Args:
        errors (dict): cerberus validator errors.
        source (str): path of the offending document, if any.
    '''

    def __init__(self, errors, source=None):
        self.errors = errors
        self.source = source
        where = f' in {source}' if source else ''
        super().__init__(f'Invalid configuration{where}: {errors}')


class ContractError(DercalError):
    pass


class SimulationFault(DercalError):
    '''Non-finite value while evaluating the plant or integrating it.'''

    def __init__(self, message, state=None, step=None, time=None):
        self.state = state
        self.step = step
        self.time = time
        details = [f'{k}={v}' for k, v in (('state', state), ('step', step), ('t', time)) if v is not None]
        super().__init__(message + (f" ({', '.join(details)})" if details else ''))


class ObservabilityFault(DercalError):

    def __init__(self, message, order=None, output=None):
        self.order = order
        self.output = output
        super().__init__(message)


class RankDeficiencyError(ObservabilityFault):
    '''No parameter removal sequence leads to a full rank observability matrix.'''

    def __init__(self, message, audit=None, spec=None):
        self.audit = audit or []
        self.spec = spec
        super().__init__(message)


class NumericalFault(DercalError):

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message if index is None else f'{message} (index {index})')


class DivergenceError(NumericalFault):
    pass


class DataFault(DercalError):
    pass


class ParseError(DataFault):
    '''Malformed measurement file.'''

    def __init__(self, line, column, reason, path=None):
        self.line = line
        self.column = column
        self.reason = reason
        self.path = path
        prefix = f'{path}: ' if path else ''
        super().__init__(f'{prefix}line {line}, column {column!r}: {reason}')


EXIT_CODES = (
    (ConfigError, 2),
    (ContractError, 2),
    (InvalidArgument, 2),
    (FileNotFoundError, 2),
    (DataFault, 3),
    (SimulationFault, 4),
    (ObservabilityFault, 4),
    (NumericalFault, 4),
)


def exit_code_for(exc):
    for kind, code in EXIT_CODES:
        if isinstance(exc, kind):
            return code
    return 1
