from .errors import ConfigurationError, InputError, NumericalError, ParseError, SpecPoolError
