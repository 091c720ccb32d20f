import logging
import colorlog
from pythonjsonlogger import jsonlogger
import sys

from config import LOG_LEVEL, LOG_FORMAT


def setup_logger(name: str) -> logging.Logger:
    """
    Console logger with colored output
    """

    logger = logging.getLogger(name)
    logger.setLevel(LOG_LEVEL)

    # Avoid duplicated handlers when modules are re-imported
    if logger.handlers:
        return logger

    console_formatter = colorlog.ColoredFormatter(
        LOG_FORMAT,
        datefmt="%Y-%m-%d %H:%M:%S",
        log_colors={
            'DEBUG': 'cyan',
            'INFO': 'green',
            'WARNING': 'yellow',
            'ERROR': 'red',
            'CRITICAL': 'red,bg_white',
        },
        reset=True,
        style='%'
    )

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(console_formatter)
    console_handler.setLevel(LOG_LEVEL)

    logger.addHandler(console_handler)

    # Quiet third-party chatter
    logging.getLogger("matplotlib").setLevel(logging.WARNING)

    return logger


def setup_file_logger(name: str, filename: str = "train.jsonl") -> logging.Logger:
    """
    JSON-lines file logger used for training events and the file-access audit.

    Each (name, filename) pair gets its own logger so that parallel runs with
    disjoint run directories never share a handler.
    """

    file_logger = logging.getLogger(f"{name}_file:{filename}")
    file_logger.setLevel(logging.INFO)
    file_logger.propagate = False

    if file_logger.handlers:
        return file_logger

    json_formatter = jsonlogger.JsonFormatter(
        "%(asctime)s %(name)s %(levelname)s %(message)s",
        rename_fields={
            "asctime": "timestamp",
            "name": "logger_name",
            "levelname": "level"
        }
    )

    file_handler = logging.FileHandler(filename)
    file_handler.setFormatter(json_formatter)
    file_handler.setLevel(logging.INFO)

    file_logger.addHandler(file_handler)

    return file_logger


def close_file_logger(file_logger: logging.Logger) -> None:
    """Flush and detach every handler of a file logger"""
    for handler in list(file_logger.handlers):
        handler.flush()
        handler.close()
        file_logger.removeHandler(handler)
