"""
Errors Module - Machine-readable failures for the registration engine
Library code raises these; only the command line turns them into exit codes
"""

from typing import Any, Dict, Optional


class RegistrationError(Exception):
    """Base class for every failure the engine reports"""

    code = "E_REGISTRATION"
    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        return {
            'code': self.code,
            'exit_code': self.exit_code,
            'message': self.message,
            'details': {k: v for k, v in self.details.items() if v is not None},
        }


class ParseError(RegistrationError):
    """A points, momentum or config file could not be parsed"""

    code = "E_PARSE"
    exit_code = 3

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, field: Optional[str] = None):
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message, path=path, line=line, field=field)


class ShapeError(RegistrationError, ValueError):
    """Configurations, momenta or problems with incompatible shapes"""

    code = "E_SHAPE"
    exit_code = 2


class ConfigError(RegistrationError, ValueError):
    """Invalid run or scale configuration"""

    code = "E_CONFIG"
    exit_code = 3


class ContractError(RegistrationError, ValueError):
    """A pre- or post-condition of an operation does not hold"""

    code = "E_CONTRACT"
    exit_code = 1


class DivergenceError(RegistrationError):
    """Integration produced a non-finite state"""

    code = "E_DIVERGENCE"
    exit_code = 5

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})", step=step)
        self.step = step


class StagnationError(RegistrationError):
    """The optimizer stopped without meeting its gradient tolerance"""

    code = "E_STAGNATION"
    exit_code = 4
