"""
sdmseg - Main Application Factory
Shape-aware semi-supervised 3D segmentation, driven through Flask CLI commands
"""
import os
import logging

from flask import Flask

from config import get_config
from core.trainer import configure_determinism


def create_app(config_name=None):
    """
    Application Factory Pattern
    Creates and configures the Flask application instance

    Args:
        config_name (str): Configuration name ('development', 'production', 'testing')

    Returns:
        Flask: Configured Flask application
    """
    # Create Flask app instance
    app = Flask(__name__)

    # Load configuration
    if config_name is None:
        config_name = os.environ.get('SDMSEG_ENV', 'development')

    config_obj = get_config(config_name)
    app.config.from_object(config_obj)

    # Configure logging
    setup_logging(app)

    # Initialize the numeric runtime
    init_extensions(app)

    # Register blueprints
    register_blueprints(app)

    app.logger.debug(f"sdmseg started in {config_name} mode")

    return app


def setup_logging(app):
    """Configure application and core package logging"""
    core_logger = logging.getLogger('core')
    formatter = logging.Formatter('[%(asctime)s] %(levelname)s in %(module)s: %(message)s')

    if not app.debug and not app.testing:
        # Production logging
        os.makedirs(app.config['LOG_FOLDER'], exist_ok=True)

        level = logging.getLevelName(app.config['LOG_LEVEL'].upper())
        if not isinstance(level, int):
            level = logging.INFO
        file_handler = logging.FileHandler(app.config['LOG_FILE'], encoding='utf-8')
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)

        app.logger.addHandler(file_handler)
        app.logger.setLevel(level)
        core_logger.addHandler(file_handler)
        core_logger.setLevel(level)
    else:
        # Development logging (console)
        app.logger.setLevel(logging.DEBUG)
        if not core_logger.handlers:
            console = logging.StreamHandler()
            console.setFormatter(formatter)
            core_logger.addHandler(console)
        core_logger.setLevel(logging.DEBUG if app.debug else logging.INFO)


def init_extensions(app):
    """Apply determinism and thread settings to torch"""
    configure_determinism(app.config['DETERMINISTIC'], app.config['TORCH_THREADS'] or None)


def register_blueprints(app):
    """Register command blueprints"""

    # Import blueprints
    from blueprints.data.commands import data_bp
    from blueprints.train.commands import train_bp
    from blueprints.evaluate.commands import evaluate_bp

    # Register blueprints
    app.register_blueprint(data_bp)
    app.register_blueprint(train_bp)
    app.register_blueprint(evaluate_bp)
