"""
Command-line entry point for sdmseg
Usage: python cli.py <command> [options]  (gen-data, compute-sdm, train,
ablation, evaluate, predict)
"""
import sys

import click
from flask.cli import FlaskGroup

from app import create_app
from core.errors import SdmsegError, ValidationError

cli = FlaskGroup(
    name='sdmseg',
    create_app=lambda: create_app(),
    add_default_commands=False,
    add_version_option=False,
    help='Shape-aware semi-supervised 3D segmentation.',
)


def main(argv=None) -> int:
    """
    Run a command and map failures to exit codes

    Returns:
        int: 0 success, 1 validation or usage error, 2 runtime failure
    """
    try:
        cli.main(args=argv, prog_name='sdmseg', standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return ValidationError.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo('Aborted!', err=True)
        return ValidationError.exit_code
    except SdmsegError as e:
        click.echo(f"Error: {e}", err=True)
        return e.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
