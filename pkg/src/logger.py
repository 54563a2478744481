import logging
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()
directory_name = Path(__file__).resolve().parent.parent

LOG_FORMAT = "%(asctime)s - %(filename)s - %(levelname)s:  %(message)s"


def get_log_dir() -> Path:
    """
    Возвращает каталог для лог-файлов: DMPCT_LOG_DIR из окружения или logs/ в корне проекта.

    :return: путь к каталогу логов (создаётся при необходимости)
    """
    log_dir = Path(os.getenv("DMPCT_LOG_DIR") or os.path.join(directory_name, "logs"))
    log_dir.mkdir(parents=True, exist_ok=True)
    return log_dir


def get_logger(name: str) -> logging.Logger:
    """
    Логгер модуля, пишущий в logs/<модуль>.log.

    :param name: имя модуля (обычно __name__)
    :return: настроенный логгер
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger
    short_name = name.rsplit(".", 1)[-1]
    handler = logging.FileHandler(get_log_dir() / f"{short_name}.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG)
    return logger
