import sys
import time
from typing import Callable

from ...data.models import RunConfig
from ...utils.errors import EXIT_NUMERIC, TimeFuseError
from ...utils.logger import logger


class LoggingMiddleware:
    """Оборачивает обработчик команды: логирует запуск и итог, переводит ошибки в коды выхода."""

    def __call__(self, handler: Callable[[RunConfig], int], config: RunConfig) -> int:
        logger.info(
            "Command started",
            command=config.command,
            inputs=[str(p) for p in config.inputs],
            outputs=[str(p) for p in config.outputs],
            seed=config.seed,
            threads=config.threads,
        )
        started = time.perf_counter()
        try:
            exit_code = handler(config)
        except TimeFuseError as e:
            logger.error(
                "Command failed",
                command=config.command,
                error=e.message,
                error_type=type(e).__name__,
                exit_code=e.exit_code,
                context=e.context,
            )
            print(f"error: {e.message}", file=sys.stderr)
            return e.exit_code
        except Exception as e:
            logger.exception("Command crashed", command=config.command, error=str(e))
            print(f"internal error: {e}", file=sys.stderr)
            return EXIT_NUMERIC

        logger.info(
            "Command finished",
            command=config.command,
            exit_code=exit_code,
            elapsed_ms=round((time.perf_counter() - started) * 1000.0, 3),
        )
        return exit_code
