"""Private spectrum retrieval with post-quantum onion transport and client puzzles."""

from .pqc import PRODUCTION, TEST_DETERMINISTIC, get_provider

__version__ = "0.1.0"

__all__ = ["PRODUCTION", "TEST_DETERMINISTIC", "get_provider", "__version__"]
