import logging
import os
from datetime import datetime
from logging.handlers import TimedRotatingFileHandler

BASE_DIR = "log"

FILE_HANDLER_INTERVAL = 1
FILE_HANDLER_BACKUP_COUNT = 7
FILE_HANDLER_WHEN = "midnight"

LOG_FORMAT = "[%(asctime)s] %(levelname)s [%(name)s] %(module)s.%(funcName)s:%(lineno)d --- %(message)s"


def _file_handler() -> TimedRotatingFileHandler:
    os.makedirs(BASE_DIR, exist_ok=True)
    return TimedRotatingFileHandler(
        filename=f"{BASE_DIR}/{datetime.now().strftime('%Y%m%d-%H%M%S')}.log",
        when=FILE_HANDLER_WHEN,
        interval=FILE_HANDLER_INTERVAL,
        backupCount=FILE_HANDLER_BACKUP_COUNT,
    )


def init(name: str) -> logging.Logger:
    if not logging.getLogger().handlers:
        logging.basicConfig(
            format=LOG_FORMAT,
            level=int(os.getenv("LOGGING_LEVEL", logging.INFO)),
            handlers=[_file_handler(), logging.StreamHandler()],
        )
    return logging.getLogger(name)
