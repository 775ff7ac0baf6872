"""
Command Line Configuration - constants shared by the entry point
"""

from .constants import (
    APP_NAME,
    APP_VERSION,
    APP_DESCRIPTION,
    LOG_FORMAT,
)

__all__ = [
    'APP_NAME',
    'APP_VERSION',
    'APP_DESCRIPTION',
    'LOG_FORMAT',
]
