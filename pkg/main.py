import sys

from dotenv import load_dotenv
from loguru import logger

from ui.cli import configure_logging, run_cli


def main():
    """Main entry point"""
    # Configure logger; run_cli reconfigures it once log_level is known
    configure_logging("INFO")

    load_dotenv()
    logger.debug("Environment variables loaded")

    sys.exit(run_cli())


if __name__ == "__main__":
    main()
