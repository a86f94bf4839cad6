import asyncio
import logging
import sys
from typing import Sequence

from anm.config.config import Settings, load_settings
from anm.handlers.experiments import router as experiments_router
from anm.handlers.pipeline import router as pipeline_router
from anm.handlers.router import Dispatcher
from anm.log_setup.logging import setup_logging


def build_dispatcher() -> Dispatcher:
    dp = Dispatcher()

    # Include routers
    dp.include_router(pipeline_router)
    dp.include_router(experiments_router)
    return dp


def main(argv: Sequence[str] | None = None, settings: Settings | None = None) -> int:

    # Load configuration
    settings = settings or load_settings(".env")

    # Setup logging
    setup_logging(settings.logging.path, settings.logging.level)
    logger = logging.getLogger(__name__)
    logger.info("🚀 anm starting...")

    dp = build_dispatcher()
    return asyncio.run(dp.dispatch(sys.argv[1:] if argv is None else argv, settings))


if __name__ == "__main__":
    sys.exit(main())
