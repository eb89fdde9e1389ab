import logging
import sys

import config


def setup_logger(name: str) -> logging.Logger:
    """
    Build and return a logger.

    Output goes to stderr: stdout carries the JSON report when no --out path
    is given, and a log line there would corrupt it.

    :param name: logger name
    :return: the configured logger
    """
    logger = logging.getLogger(name)

    level = getattr(logging, config.LOG_LEVEL.upper(), logging.INFO)
    logger.setLevel(level)

    # Only add a handler when there is none, so repeat calls do not duplicate output.
    if not logger.handlers:
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(funcName)s - %(levelname)s - %(message)s'
        )
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        console_handler.setLevel(level)
        logger.addHandler(console_handler)

    logger.propagate = False

    return logger
