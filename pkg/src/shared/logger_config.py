import logging
import os
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(console_level=logging.INFO, file_level=logging.DEBUG, log_file: Optional[str] = None):
    """
    Configures the root logger for the command-line tools.

    Console output goes to stderr so that stdout stays free for results. A file
    handler is added when ``log_file`` is given or ``DEAUTOCONV_LOG_FILE`` is set.

    Args:
        console_level: The logging level for the console (stderr) handler.
        file_level: The logging level for the file handler.
        log_file: Path of an optional log file, appended to.
    """
    log_file = log_file or os.getenv("DEAUTOCONV_LOG_FILE")

    root_logger = logging.getLogger()
    root_logger.setLevel(min(file_level, console_level) if log_file else console_level)

    # Clear existing handlers to prevent duplicate logs
    if root_logger.hasHandlers():
        root_logger.handlers.clear()

    formatter = logging.Formatter(LOG_FORMAT)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setLevel(console_level)
    stream_handler.setFormatter(formatter)
    root_logger.addHandler(stream_handler)

    if log_file:
        directory = os.path.dirname(os.path.abspath(log_file))
        os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(log_file, mode="a")
        file_handler.setLevel(file_level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    logging.debug("Logging configured. Console level: %s, log file: %s",
                  logging.getLevelName(console_level), log_file or "none")
