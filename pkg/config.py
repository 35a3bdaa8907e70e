"""
Configuration module for sdmseg
Supports Development, Production and Testing environments
"""
import os


def _env_bool(name, default):
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


def _env_int(name, default):
    value = os.environ.get(name)
    return int(value) if value not in (None, '') else default


class Config:
    """Base configuration with common settings"""

    # Application
    APP_NAME = "sdmseg"

    # Numeric runtime
    DEVICE = os.environ.get('SDMSEG_DEVICE', 'cpu')
    DETERMINISTIC = _env_bool('SDMSEG_DETERMINISTIC', True)
    TORCH_THREADS = _env_int('SDMSEG_TORCH_THREADS', 0)  # 0 keeps the torch default
    PREFETCH_BATCHES = _env_int('SDMSEG_PREFETCH_BATCHES', 2)
    GEN_WORKERS = _env_int('SDMSEG_GEN_WORKERS', 1)

    # Logging
    LOG_FOLDER = os.environ.get('SDMSEG_LOG_FOLDER') or os.path.join(
        os.path.dirname(os.path.abspath(__file__)), 'logs')
    LOG_FILE = os.path.join(LOG_FOLDER, 'sdmseg.log')
    LOG_LEVEL = os.environ.get('SDMSEG_LOG_LEVEL', 'INFO')


class DevelopmentConfig(Config):
    """Development environment configuration"""
    DEBUG = True
    TESTING = False
    ENV = 'development'


class ProductionConfig(Config):
    """Production environment configuration: long runs, file logging"""
    DEBUG = False
    TESTING = False
    ENV = 'production'


class TestingConfig(Config):
    """Testing environment configuration"""
    DEBUG = True
    TESTING = True
    ENV = 'testing'

    # Inline batches keep test runs single-threaded
    PREFETCH_BATCHES = 0
    TORCH_THREADS = 1
    GEN_WORKERS = 1


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def get_config(env_name=None):
    """
    Get configuration object based on environment name

    Args:
        env_name (str): Environment name ('development', 'production', 'testing')
                       If None, uses SDMSEG_ENV environment variable or 'development'

    Returns:
        Config: Configuration object
    """
    if env_name is None:
        env_name = os.environ.get('SDMSEG_ENV', 'development')

    return config.get(env_name, config['default'])
