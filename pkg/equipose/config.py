import os
from typing import Optional

import torch
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Runtime configuration shared by the CLI, the API and the services
EQUIPOSE_THREADS = os.getenv("EQUIPOSE_THREADS")
EQUIPOSE_DATA_DIR = os.getenv("EQUIPOSE_DATA_DIR", "./data")
EQUIPOSE_CHECKPOINT = os.getenv("EQUIPOSE_CHECKPOINT")
EQUIPOSE_DETERMINISTIC = os.getenv("EQUIPOSE_DETERMINISTIC", "0") == "1"


def get_thread_cap() -> Optional[int]:
    """Parallelism cap from EQUIPOSE_THREADS, or None when unset."""
    if not EQUIPOSE_THREADS:
        return None
    try:
        threads = int(EQUIPOSE_THREADS)
    except ValueError:
        raise ValueError(f"EQUIPOSE_THREADS must be an integer, got {EQUIPOSE_THREADS!r}")
    if threads < 1:
        raise ValueError("EQUIPOSE_THREADS must be >= 1")
    return threads


def apply_runtime_settings(deterministic: bool = False) -> None:
    """Apply thread cap and determinism flags to torch."""
    threads = get_thread_cap()
    if threads is not None:
        torch.set_num_threads(threads)
    if deterministic or EQUIPOSE_DETERMINISTIC:
        torch.use_deterministic_algorithms(True)
        print("SUCCESS: [CONFIG] deterministic mode enabled")
