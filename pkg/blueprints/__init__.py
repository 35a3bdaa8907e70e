"""
Blueprints package for sdmseg
Command blueprints (data, train, evaluate) and their shared error handling
"""
import logging
from functools import wraps

import click

from core.errors import SdmsegError, ValidationError

logger = logging.getLogger('core.commands')


class CommandError(click.ClickException):
    """Click failure carrying the process exit code of the wrapped error"""

    def __init__(self, message, exit_code=2):
        super().__init__(message)
        self.exit_code = exit_code


def handle_errors(f):
    """Decorator translating domain errors into command failures"""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except click.ClickException:
            raise
        except SdmsegError as e:
            logger.error("%s failed: %s", f.__name__, e)
            raise CommandError(str(e), e.exit_code) from e
        except FileNotFoundError as e:
            logger.error("%s failed: %s", f.__name__, e)
            raise CommandError(f"file not found: {e.filename or e}", ValidationError.exit_code) from e
        except (OSError, RuntimeError) as e:
            logger.exception("%s failed", f.__name__)
            raise CommandError(str(e), SdmsegError.exit_code) from e
    return decorated_function


def echo_params(ctx: click.Context) -> dict:
    """Resolved command parameters, paths as strings"""
    return {key: (str(value) if hasattr(value, '__fspath__') else value)
            for key, value in ctx.params.items()}
